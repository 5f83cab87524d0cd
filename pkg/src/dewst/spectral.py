"""Radial DFT bands, band energies and spectral retention ratios.

All transforms are 2-D over the last two axes of a ``(C, H, W)`` array with
unitary ("ortho") normalization, so band energies add up to the squared
Euclidean norm of the input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np
from scipy import ndimage

BANDS = ("low", "mid", "high")


class DegenerateBandError(ValueError):
    """A retention ratio was requested for a band with zero reference energy."""

    def __init__(self, band: str):
        super().__init__(f"band {band!r} has zero watermark energy; retention ratio undefined")
        self.band = band


@dataclass(frozen=True)
class BandPartition:
    """Radial cutoffs in cycles/pixel: low ``[0, f1)``, mid ``[f1, f2)``, high ``[f2, sqrt(2)/2]``."""

    f1: float = 1.0 / 8.0
    f2: float = 1.0 / 4.0

    def __post_init__(self):
        if not 0.0 < self.f1 < self.f2 < 0.5:
            raise ValueError(f"need 0 < f1 < f2 < 0.5, got f1={self.f1}, f2={self.f2}")

    def masks(self, h: int, w: int) -> dict[str, np.ndarray]:
        return dict(zip(BANDS, _band_masks(self.f1, self.f2, h, w)))

    def gain_map(self, gains: Iterable[float], h: int, w: int) -> np.ndarray:
        """Per-bin multiplier taking value ``gains[k]`` on band ``k``."""
        lo, mid, hi = _band_masks(self.f1, self.f2, h, w)
        g = tuple(float(v) for v in gains)
        if len(g) != 3:
            raise ValueError("need exactly three band gains (low, mid, high)")
        return g[0] * lo + g[1] * mid + g[2] * hi


DEFAULT_PARTITION = BandPartition()


@lru_cache(maxsize=64)
def radial_frequency(h: int, w: int) -> np.ndarray:
    fr = np.hypot(np.fft.fftfreq(h)[:, None], np.fft.fftfreq(w)[None, :])
    fr.setflags(write=False)
    return fr


@lru_cache(maxsize=64)
def _band_masks(f1: float, f2: float, h: int, w: int) -> tuple[np.ndarray, ...]:
    fr = radial_frequency(h, w)
    lo = fr < f1
    mid = (fr >= f1) & (fr < f2)
    hi = fr >= f2
    out = tuple(m.astype(np.float64) for m in (lo, mid, hi))
    for m in out:
        m.setflags(write=False)
    return out


def _fft(img: np.ndarray) -> np.ndarray:
    return np.fft.fft2(img, axes=(-2, -1), norm="ortho")


def _ifft(spec: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(spec, axes=(-2, -1), norm="ortho").real


def apply_band_gains(img: np.ndarray, gains, partition: BandPartition = DEFAULT_PARTITION) -> np.ndarray:
    """Scale each radial band of ``img`` by its gain (a diagonal operator in frequency)."""
    h, w = img.shape[-2:]
    return _ifft(_fft(img) * partition.gain_map(gains, h, w))


def project(img: np.ndarray, band: str, partition: BandPartition = DEFAULT_PARTITION) -> np.ndarray:
    """Orthogonal projection of ``img`` onto one band."""
    if band not in BANDS:
        raise ValueError(f"unknown band {band!r}")
    gains = [1.0 if b == band else 0.0 for b in BANDS]
    return apply_band_gains(img, gains, partition)


def band_energies(residual: np.ndarray, partition: BandPartition = DEFAULT_PARTITION) -> dict[str, float]:
    """Energy of ``residual`` in every band, summed over channels."""
    h, w = residual.shape[-2:]
    power = np.abs(_fft(residual)) ** 2
    if power.ndim > 2:
        power = power.reshape(-1, h, w).sum(axis=0)
    return {b: float(np.sum(power * m)) for b, m in partition.masks(h, w).items()}


def band_energy(residual: np.ndarray, band: str, partition: BandPartition = DEFAULT_PARTITION) -> float:
    if band not in BANDS:
        raise ValueError(f"unknown band {band!r}")
    return band_energies(residual, partition)[band]


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Spatial Gaussian blur of each channel plane; ``sigma = 0`` returns a copy."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return np.array(img, dtype=np.float64, copy=True)
    return ndimage.gaussian_filter(img, sigma=(0, sigma, sigma), mode="reflect")


@dataclass(frozen=True)
class RetentionResult:
    numerator: dict[str, float]
    denominator: dict[str, float]
    rho: dict[str, float]

    def rows(self):
        for b in BANDS:
            yield b, self.numerator[b], self.denominator[b], self.rho[b]


def retention_from_energies(num: Mapping[str, float], den: Mapping[str, float]) -> RetentionResult:
    rho = {}
    for b in BANDS:
        if not den[b] > 0:
            raise DegenerateBandError(b)
        rho[b] = num[b] / den[b]
    return RetentionResult(dict(num), dict(den), rho)


def spectral_retention(pairs, partition: BandPartition = DEFAULT_PARTITION) -> RetentionResult:
    """Spectral retention ratio per band.

    Parameters
    ----------
    pairs : iterable of (edited_wm, edited_base, input_wm, input_clean)
        Coupled edit outputs and their inputs.  The ratio is mean band energy
        of ``edited_wm - edited_base`` over mean band energy of
        ``input_wm - input_clean``.
    """
    num = dict.fromkeys(BANDS, 0.0)
    den = dict.fromkeys(BANDS, 0.0)
    n = 0
    for edited_wm, edited_base, input_wm, input_clean in pairs:
        e_num = band_energies(np.asarray(edited_wm) - np.asarray(edited_base), partition)
        e_den = band_energies(np.asarray(input_wm) - np.asarray(input_clean), partition)
        for b in BANDS:
            num[b] += e_num[b]
            den[b] += e_den[b]
        n += 1
    if n == 0:
        raise ValueError("no pairs given")
    return retention_from_energies({b: v / n for b, v in num.items()}, {b: v / n for b, v in den.items()})


def write_band_report(result: RetentionResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["band", "numerator_energy", "denominator_energy", "rho"])
        for b, n, d, r in result.rows():
            writer.writerow([b, repr(n), repr(d), repr(r)])
