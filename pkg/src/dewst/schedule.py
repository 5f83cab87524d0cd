"""Discrete and continuous noise schedules.

The discrete schedule caches ``alpha_bar[t] = prod_{s<=t} (1 - beta_s)`` with
``alpha_bar[0] = 1``.  Edit strengths ``t*`` in [0, 1] map to start steps by
``round(t* * T)`` (half rounds up).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SCHEDULE_KINDS = ("linear", "constant", "cosine", "geometric")


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    kind: str = "custom"
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        betas.setflags(write=False)
        ab = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        ab.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", ab)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def start_step(self, t_star: float) -> int:
        if not 0.0 <= t_star <= 1.0:
            raise ValueError(f"t_star must lie in [0, 1], got {t_star}")
        return int(math.floor(t_star * self.T + 0.5))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "T": self.T, "betas": self.betas.tolist()}


def linear_schedule(T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.2) -> NoiseSchedule:
    return NoiseSchedule(np.linspace(beta_start, beta_end, T), kind="linear")


def constant_schedule(beta: float, T: int = 100) -> NoiseSchedule:
    return NoiseSchedule(np.full(T, float(beta)), kind="constant")


def geometric_schedule(T: int = 100, beta_start: float = 1e-5, beta_end: float = 0.2) -> NoiseSchedule:
    """Log-linear betas: slow noising at small ``t`` and steep growth late."""
    return NoiseSchedule(np.geomspace(beta_start, beta_end, T), kind="geometric")


def cosine_schedule(T: int = 100, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Betas derived from ``alpha_bar(u) = cos^2((u + s) / (1 + s) * pi / 2)``."""
    u = np.arange(T + 1) / T
    f = np.cos((u + s) / (1 + s) * np.pi / 2) ** 2
    ab = f / f[0]
    betas = np.clip(1.0 - ab[1:] / ab[:-1], 1e-8, max_beta)
    return NoiseSchedule(betas, kind="cosine")


def default_schedule() -> NoiseSchedule:
    """Schedule used by the editor and the stress protocol unless configured."""
    return geometric_schedule()


def schedule_from_config(cfg: dict | None) -> NoiseSchedule:
    """Build a schedule from ``{"kind": ..., "T": ..., <params>}``."""
    if cfg is None:
        return default_schedule()
    cfg = dict(cfg)
    kind = cfg.pop("kind", "geometric")
    builders = {
        "linear": linear_schedule,
        "constant": constant_schedule,
        "cosine": cosine_schedule,
        "geometric": geometric_schedule,
    }
    if kind == "custom":
        return NoiseSchedule(np.asarray(cfg["betas"]), kind="custom")
    if kind not in builders:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    try:
        return builders[kind](**cfg)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind} schedule: {exc}") from exc


def alpha_bar(sched: NoiseSchedule, t: int) -> float:
    if not 0 <= t <= sched.T:
        raise ValueError(f"step {t} outside [0, {sched.T}]")
    return float(sched.alpha_bars[t])


def snr_from_alpha_bar(ab: float, gamma: float) -> float:
    if ab >= 1.0:
        return math.inf
    return gamma * gamma * ab / (1.0 - ab)


def snr_theoretical(sched: NoiseSchedule, t: int, gamma: float) -> float:
    """Watermark SNR ``gamma^2 abar / (1 - abar)`` after ``t`` noising steps; inf at t = 0."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return snr_from_alpha_bar(alpha_bar(sched, t), gamma)


@dataclass(frozen=True)
class ContinuousSchedule:
    """``beta(u) = beta0 + slope * u`` (``slope = 0`` gives a constant schedule)."""

    beta0: float
    slope: float = 0.0

    def __post_init__(self):
        if self.beta0 < 0 or self.slope < 0:
            raise ValueError("beta0 and slope must be non-negative")

    @classmethod
    def constant(cls, beta: float) -> "ContinuousSchedule":
        return cls(beta, 0.0)

    @classmethod
    def linear(cls, beta0: float, slope: float) -> "ContinuousSchedule":
        return cls(beta0, slope)

    def beta(self, u):
        return self.beta0 + self.slope * np.asarray(u, dtype=np.float64)

    def integral(self, t: float) -> float:
        return self.beta0 * t + 0.5 * self.slope * t * t


def mean_decay_factor(csched: ContinuousSchedule, t: float) -> float:
    """``exp(-1/2 * integral_0^t beta(u) du)``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return math.exp(-0.5 * csched.integral(t))
