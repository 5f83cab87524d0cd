"""Synthetic diffusion editor.

An edit noises the input to the start step implied by ``t_star`` and then
applies ``n_steps`` denoising steps.  Each step contracts the state toward
a fixed anchor field with per-band gains::

    y <- anchor + sum_b g_b * P_b(y - anchor)

The anchor is a Gaussian blur of the edit's conditioning image.  It is fixed
for the whole trajectory and shared by coupled runs, so the difference of two
trajectories evolves by the band gains alone and every contraction bound can
be checked exactly.  ``resynth`` mode additionally replaces the high band
with fresh texture matched to the state's radial power spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .schedule import ContinuousSchedule, NoiseSchedule
from .spectral import DEFAULT_PARTITION, BandPartition, apply_band_gains, gaussian_blur, radial_frequency
from .tensors_io import RngStream, check_image, check_same_shape

EDIT_MODES = ("linear_shrink", "resynth")
DEFAULT_GAINS = (0.98, 0.85, 0.55)


@dataclass(frozen=True, eq=False)
class EditConfig:
    t_star: float = 0.4
    n_steps: int = 5
    band_gains: tuple[float, float, float] = DEFAULT_GAINS
    mode: str = "linear_shrink"
    mask: np.ndarray | None = None
    coupling_kappa: float = 0.15
    anchor_sigma: float = 2.0
    seed_lanes: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.t_star <= 1.0:
            raise ValueError(f"t_star must lie in [0, 1], got {self.t_star}")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        gains = tuple(float(g) for g in self.band_gains)
        if len(gains) != 3 or any(not 0.0 < g <= 1.0 for g in gains):
            raise ValueError(f"band gains must be three values in (0, 1], got {self.band_gains}")
        object.__setattr__(self, "band_gains", gains)
        if self.mode not in EDIT_MODES:
            raise ValueError(f"unknown edit mode {self.mode!r}; expected one of {EDIT_MODES}")
        if not 0.0 <= self.coupling_kappa <= 1.0:
            raise ValueError("coupling_kappa must lie in [0, 1]")
        if self.anchor_sigma < 0:
            raise ValueError("anchor_sigma must be non-negative")
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=np.float64)
            if m.ndim != 2 or not np.all((m == 0) | (m == 1)):
                raise ValueError("mask must be a 2-D binary array")
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)

    def with_t_star(self, t_star: float) -> "EditConfig":
        return replace(self, t_star=t_star)

    @property
    def contraction_factor(self) -> float:
        """Largest per-step band gain (the contraction factor rho)."""
        return max(self.band_gains)


IDENTITY_EDIT = EditConfig(t_star=0.0, n_steps=0)


@dataclass(eq=False)
class EditOutcome:
    edited: np.ndarray
    realized_alpha_bar: float
    start_step: int
    step_log: list[float] = field(default_factory=list)
    baseline_edited: np.ndarray | None = None
    noise_norm: float = 0.0

    @property
    def residual(self) -> np.ndarray:
        if self.baseline_edited is None:
            raise ValueError("no baseline; use coupled_edit")
        return self.edited - self.baseline_edited


# ---------------------------------------------------------------- building blocks


def forward_noise(x: np.ndarray, sched: NoiseSchedule, t_star: float, rng: RngStream):
    """``sqrt(abar) x + sqrt(1 - abar) eps``; returns ``(x_t, abar)``.

    No noise is drawn when the start step is 0, and ``x`` comes back unchanged.
    """
    step = sched.start_step(t_star)
    ab = float(sched.alpha_bars[step])
    if step == 0:
        return np.array(x, dtype=np.float64, copy=True), ab
    eps = rng.normal(np.shape(x))
    return math.sqrt(ab) * x + math.sqrt(1.0 - ab) * eps, ab


def denoise_step(y: np.ndarray, anchor, band_gains, partition: BandPartition = DEFAULT_PARTITION) -> np.ndarray:
    """One contraction step toward ``anchor`` (an array or a scalar)."""
    return anchor + apply_band_gains(y - anchor, band_gains, partition)


def make_anchor(condition: np.ndarray, sigma: float) -> np.ndarray:
    return gaussian_blur(condition, sigma)


def _ring_index(h: int, w: int) -> np.ndarray:
    return np.floor(radial_frequency(h, w) * max(h, w) + 0.5).astype(np.int64)


def resynthesize_high(z: np.ndarray, white: np.ndarray, partition: BandPartition = DEFAULT_PARTITION) -> np.ndarray:
    """Replace the high band of ``z`` with ``white`` shaped to z's radial high-band power.

    ``white`` is standard normal noise of z's shape.  Power is matched per
    channel on rings of unit radial width.
    """
    c, h, w = z.shape[-3:]
    hi = partition.masks(h, w)["high"].astype(bool)
    rings = _ring_index(h, w)[hi]
    nr = int(rings.max()) + 1
    Z = np.fft.fft2(z, axes=(-2, -1), norm="ortho")
    N = np.fft.fft2(white, axes=(-2, -1), norm="ortho")
    out_spec = Z.copy()
    flat_z = Z.reshape(-1, h, w)
    flat_n = N.reshape(-1, h, w)
    flat_o = out_spec.reshape(-1, h, w)
    for k in range(flat_z.shape[0]):
        pz = np.bincount(rings, weights=np.abs(flat_z[k][hi]) ** 2, minlength=nr)
        pn = np.bincount(rings, weights=np.abs(flat_n[k][hi]) ** 2, minlength=nr)
        scale = np.sqrt(np.divide(pz, pn, out=np.zeros_like(pz), where=pn > 0))
        flat_o[k][hi] = flat_n[k][hi] * scale[rings]
    return np.fft.ifft2(out_spec, axes=(-2, -1), norm="ortho").real


def _blend_weight(config: EditConfig, shape) -> np.ndarray | None:
    if config.mask is None:
        return None
    if config.mask.shape != tuple(shape[-2:]):
        raise ValueError(f"mask shape {config.mask.shape} does not match image {shape[-2:]}")
    return config.mask + config.coupling_kappa * (1.0 - config.mask)


def _run_kernel(inputs, noised, anchor, config: EditConfig, white, partition):
    """Denoise each state in ``noised`` and blend against ``inputs``; returns outputs and per-step states."""
    states = [list(noised)]
    cur = list(noised)
    for _ in range(config.n_steps):
        cur = [denoise_step(y, anchor, config.band_gains, partition) for y in cur]
        states.append(cur)
    if config.mode == "resynth" and config.n_steps > 0:
        cur = [resynthesize_high(y, white, partition) for y in cur]
        states.append(cur)
    weight = _blend_weight(config, inputs[0].shape)
    if weight is not None:
        cur = [x + weight * (y - x) for x, y in zip(inputs, cur)]
        states.append(cur)
    return cur, states


def _draw(x, sched, config, rng):
    step = sched.start_step(config.t_star)
    ab = float(sched.alpha_bars[step])
    eps = rng.normal(x.shape) if step > 0 else None
    white = rng.normal(x.shape) if (config.mode == "resynth" and config.n_steps > 0) else None
    return step, ab, eps, white


def _noise(x, ab, eps):
    if eps is None:
        return np.array(x, copy=True)
    return math.sqrt(ab) * x + math.sqrt(1.0 - ab) * eps


# ---------------------------------------------------------------- edits


def denoise_from(
    x_t: np.ndarray,
    config: EditConfig,
    anchor,
    rng: RngStream,
    partition: BandPartition = DEFAULT_PARTITION,
) -> np.ndarray:
    """Run the reverse half of the kernel from an already-noised state (no mask blending)."""
    white = rng.normal(x_t.shape) if (config.mode == "resynth" and config.n_steps > 0) else None
    out, _ = _run_kernel([x_t], [x_t], anchor, replace(config, mask=None), white, partition)
    return out[0]


def edit(
    x: np.ndarray,
    config: EditConfig,
    sched: NoiseSchedule,
    rng: RngStream,
    condition: np.ndarray | None = None,
    partition: BandPartition = DEFAULT_PARTITION,
) -> EditOutcome:
    """Apply one synthetic diffusion edit.

    ``condition`` is the image the instruction refers to; the anchor is its
    blur at ``config.anchor_sigma``.  It defaults to ``x`` itself.  Pass the
    same condition to compare edits of different inputs.
    """
    x = check_image(x)
    cond = x if condition is None else check_image(condition, "condition")
    check_same_shape(x, cond)
    _blend_weight(config, x.shape)
    step, ab, eps, white = _draw(x, sched, config, rng)
    anchor = make_anchor(cond, config.anchor_sigma)
    x_t = _noise(x, ab, eps)
    (out,), states = _run_kernel([x], [x_t], anchor, config, white, partition)
    log = [float(np.linalg.norm(s[0] - anchor)) for s in states]
    noise_norm = 0.0 if eps is None else math.sqrt(1.0 - ab) * float(np.linalg.norm(eps))
    return EditOutcome(out, ab, step, log, noise_norm=noise_norm)


def coupled_edit(
    x_w: np.ndarray,
    x: np.ndarray,
    config: EditConfig,
    sched: NoiseSchedule,
    rng: RngStream,
    condition: np.ndarray | None = None,
    partition: BandPartition = DEFAULT_PARTITION,
) -> EditOutcome:
    """Edit ``x_w`` and ``x`` with identical noise and a shared anchor.

    The condition defaults to the clean image ``x``.  ``step_log`` holds the
    norm of the watermarked-minus-baseline difference after noising, after
    each denoising step and after any resynthesis/blending stage.
    """
    x_w = check_image(x_w, "x_w")
    x = check_image(x)
    check_same_shape(x_w, x)
    cond = x if condition is None else check_image(condition, "condition")
    check_same_shape(x, cond)
    _blend_weight(config, x.shape)
    step, ab, eps, white = _draw(x, sched, config, rng)
    anchor = make_anchor(cond, config.anchor_sigma)
    noised = [_noise(x_w, ab, eps), _noise(x, ab, eps)]
    (out_w, out_b), states = _run_kernel([x_w, x], noised, anchor, config, white, partition)
    log = [float(np.linalg.norm(s[0] - s[1])) for s in states]
    noise_norm = 0.0 if eps is None else math.sqrt(1.0 - ab) * float(np.linalg.norm(eps))
    return EditOutcome(out_w, ab, step, log, baseline_edited=out_b, noise_norm=noise_norm)


# ---------------------------------------------------------------- OU SDE


def _ou_steps(t_end: float, dt: float | None) -> tuple[int, float]:
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if dt is None:
        dt = t_end / 1000.0
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > t_end / 10.0 * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds t_end/10")
    n = max(1, int(round(t_end / dt)))
    return n, t_end / n


def ou_simulate(x0, csched: ContinuousSchedule, t_end: float, rng: RngStream, dt: float | None = None) -> np.ndarray:
    """Euler-Maruyama endpoint of ``dX = -beta(t)/2 X dt + sqrt(beta(t)) dW``.

    ``dt`` defaults to ``t_end / 1000`` and is adjusted so that an integer
    number of steps lands exactly on ``t_end``.
    """
    return ou_simulate_coupled(x0, None, csched, t_end, rng, dt)[0]


def ou_simulate_coupled(x0_a, x0_b, csched: ContinuousSchedule, t_end: float, rng: RngStream, dt: float | None = None):
    """Simulate one or two initial conditions driven by the same Brownian increments."""
    n, h = _ou_steps(t_end, dt)
    xa = np.array(x0_a, dtype=np.float64, copy=True)
    xb = None if x0_b is None else np.array(x0_b, dtype=np.float64, copy=True)
    if xb is not None and xb.shape != xa.shape:
        raise ValueError("coupled initial conditions must share a shape")
    for k in range(n):
        b = float(csched.beta(k * h))
        dw = rng.normal(xa.shape) * math.sqrt(h)
        xa = xa - 0.5 * b * xa * h + math.sqrt(b) * dw
        if xb is not None:
            xb = xb - 0.5 * b * xb * h + math.sqrt(b) * dw
    return xa, xb
