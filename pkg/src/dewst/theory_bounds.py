"""Closed-form information bounds and Monte-Carlo oracles that check them.

Information quantities are in nats.  The verification channel is

    Y = sqrt(abar) * gamma * s(M) + sqrt(1 - abar) * eps,    eps ~ N(0, I_d)

with ``M`` uniform over ``2**L`` messages and ``s(M) = sum_i sigma_i c_i / sqrt(L)``
built from orthogonal carriers with ``||c_i||^2 = d``, so ``||s||^2 = d`` for
every message.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .schedule import NoiseSchedule, snr_from_alpha_bar
from .tensors_io import RngStream, derive_stream

MAX_ENUM_BITS = 8
MAX_CHANNEL_DIM = 64
LN2 = math.log(2.0)


@dataclass(frozen=True, eq=False)
class ChannelSpec:
    d: int
    L: int
    gamma: float
    alpha_bar: float
    carriers: np.ndarray = field(repr=False)  # (L, d)

    def __post_init__(self):
        if self.L < 1 or self.d < self.L:
            raise ValueError(f"need 1 <= L <= d, got L={self.L}, d={self.d}")
        if not 0.0 < self.alpha_bar < 1.0:
            raise ValueError("alpha_bar must lie in (0, 1)")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.carriers.shape != (self.L, self.d):
            raise ValueError(f"carrier matrix must be ({self.L}, {self.d}), got {self.carriers.shape}")

    @property
    def noise_var(self) -> float:
        return 1.0 - self.alpha_bar

    def message_signals(self) -> np.ndarray:
        """``s(m)`` for every message, rows ordered by ``m`` read as a big-endian integer."""
        signs = 2.0 * np.array(list(itertools.product((0, 1), repeat=self.L))) - 1.0
        return signs @ self.carriers / math.sqrt(self.L)

    def means(self) -> np.ndarray:
        return math.sqrt(self.alpha_bar) * self.gamma * self.message_signals()


def make_channel(d: int, L: int, gamma: float, alpha_bar: float, seed: int = 0) -> ChannelSpec:
    """Channel with random orthogonal carriers scaled to ``||c_i||^2 = d``."""
    if d > MAX_CHANNEL_DIM:
        raise ValueError(f"verification channels are capped at d <= {MAX_CHANNEL_DIM}")
    if L > d:
        raise ValueError("need L <= d for orthogonal carriers")
    g = derive_stream(seed, [0xC4A7, d, L]).normal((d, L))
    q, _ = np.linalg.qr(g)
    return ChannelSpec(d, L, gamma, alpha_bar, q.T * math.sqrt(d))


def gaussian_capacity(d: int, snr: float) -> float:
    """``d/2 * ln(1 + snr)`` in nats."""
    if math.isinf(snr):
        return math.inf
    return 0.5 * d * math.log1p(snr)


def mi_upper_bound(spec: ChannelSpec) -> float:
    """Gaussian-capacity bound on I(M; Y), in nats."""
    return gaussian_capacity(spec.d, snr_from_alpha_bar(spec.alpha_bar, spec.gamma))


def fano_lower_bound(mi: float, L: int) -> float:
    """``max(0, 1 - (I + ln 2) / (L ln 2))`` for a uniform L-bit message."""
    if mi < 0:
        raise ValueError("mutual information must be non-negative")
    if L < 1:
        raise ValueError("L must be at least 1")
    return max(0.0, 1.0 - (mi + LN2) / (L * LN2))


def contraction_bound(rho: float, n: int, delta_norm: float) -> float:
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    if n < 1:
        raise ValueError("n must be at least 1")
    return rho**n * delta_norm


def _effective_channel(spec: ChannelSpec, post_map):
    """Means in a basis where the (possibly post-mapped) noise is ``sigma * I``."""
    means = spec.means()
    if post_map is None:
        return means
    a = np.asarray(post_map, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != spec.d:
        raise ValueError(f"post map must have shape (k, {spec.d})")
    lam, u = np.linalg.eigh(a @ a.T)
    keep = lam > 1e-12 * max(lam.max(), 1e-300)
    whiten = (u[:, keep] / np.sqrt(lam[keep])).T
    return means @ a.T @ whiten.T


def _sample(spec: ChannelSpec, means: np.ndarray, n: int, rng: RngStream):
    msgs = rng.integers(0, means.shape[0], size=n)
    sigma = math.sqrt(spec.noise_var)
    y = means[msgs] + sigma * rng.normal((n, means.shape[1]))
    return msgs, y


def _loglik(y: np.ndarray, means: np.ndarray, noise_var: float) -> np.ndarray:
    sq = (y * y).sum(axis=1)[:, None] - 2.0 * y @ means.T + (means * means).sum(axis=1)[None, :]
    return -0.5 * sq / noise_var


def _check_enum(spec: ChannelSpec):
    if spec.L > MAX_ENUM_BITS:
        raise ValueError(f"exact enumeration needs L <= {MAX_ENUM_BITS}, got {spec.L}")


def mi_monte_carlo(spec: ChannelSpec, n_samples: int, rng: RngStream, post_map=None, chunk: int = 4096):
    """Estimate I(M; Y) or I(M; A Y) by the exact-mixture identity.

    Each sample contributes ``ln p(y|m) - ln p(y)`` with ``p(y)`` summed over
    all ``2**L`` messages.  ``post_map`` is an optional linear map ``A``
    (``k x d``) applied to ``Y``; rank-deficient maps are handled on their
    range.  Returns ``(estimate, standard_error)`` in nats.
    """
    _check_enum(spec)
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 10^4")
    means = _effective_channel(spec, post_map)
    log_m = spec.L * LN2
    vals = np.empty(n_samples)
    for start in range(0, n_samples, chunk):
        n = min(chunk, n_samples - start)
        msgs, y = _sample(spec, means, n, rng)
        ll = _loglik(y, means, spec.noise_var)
        vals[start:start + n] = ll[np.arange(n), msgs] - logsumexp(ll, axis=1) + log_m
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def ml_decoder_error(spec: ChannelSpec, n_trials: int, rng: RngStream, post_map=None, chunk: int = 4096):
    """Empirical full-message error of exhaustive ML decoding; returns ``(rate, stderr)``.

    Ties (e.g. ``gamma = 0``) resolve to the lowest message index.
    """
    _check_enum(spec)
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    means = _effective_channel(spec, post_map)
    errors = 0
    for start in range(0, n_trials, chunk):
        n = min(chunk, n_trials - start)
        msgs, y = _sample(spec, means, n, rng)
        guess = np.argmax(_loglik(y, means, spec.noise_var), axis=1)
        errors += int(np.sum(guess != msgs))
    p = errors / n_trials
    return p, math.sqrt(p * (1.0 - p) / n_trials)


def binary_input_mi_quadrature(amplitude: float, noise_std: float) -> float:
    """I(X; Z) for ``Z = X + N(0, noise_std^2)``, ``X = +/-amplitude`` equiprobable, by quadrature."""
    from scipy import integrate

    if amplitude == 0:
        return 0.0
    a, s = amplitude, noise_std

    def integrand(z):
        # density under X = +a times ln(p(z|+a) / p(z))
        log_ratio = LN2 - np.logaddexp(0.0, -2.0 * a * z / s**2)
        return math.exp(-0.5 * ((z - a) / s) ** 2) / (s * math.sqrt(2 * math.pi)) * log_ratio

    val, _ = integrate.quad(integrand, a - 12 * s, a + 12 * s, limit=200)
    return val


def bounds_table(sched: NoiseSchedule, gamma: float, d: int, L: int, strengths) -> list[dict]:
    """Rows of ``(t_star, step, alpha_bar, snr, mi_bound_nats, mi_bound_bits, fano_bound)``."""
    rows = []
    for t in strengths:
        step = sched.start_step(t)
        ab = float(sched.alpha_bars[step])
        snr = snr_from_alpha_bar(ab, gamma)
        mi = gaussian_capacity(d, snr)
        rows.append(
            {
                "t_star": t,
                "step": step,
                "alpha_bar": ab,
                "snr": snr,
                "mi_bound_nats": mi,
                "mi_bound_bits": mi / LN2,
                "fano_bound": fano_lower_bound(mi, L) if math.isfinite(mi) else 0.0,
            }
        )
    return rows
