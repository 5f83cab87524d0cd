"""Robustness and fidelity metrics."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 8


def bit_accuracy(decoded, truth) -> tuple[float, float]:
    """Return ``(BA, BER)``."""
    decoded = np.asarray(decoded)
    truth = np.asarray(truth)
    if decoded.shape != truth.shape:
        raise ValueError(f"length mismatch: {decoded.shape} vs {truth.shape}")
    if decoded.size == 0:
        raise ValueError("empty bit arrays")
    ba = float(np.mean(decoded == truth))
    return ba, 1.0 - ba


def roc_auc(pos_scores, neg_scores) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg)."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs nonempty positive and negative score sets")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def threshold_at_tpr(pos, target_tpr: float) -> float:
    """Largest threshold ``tau`` with ``P(pos >= tau) >= target_tpr``."""
    pos = np.sort(np.asarray(pos, dtype=np.float64).ravel())[::-1]
    if pos.size == 0:
        raise ValueError("empty positive scores")
    if not 0.0 < target_tpr <= 1.0:
        raise ValueError("target_tpr must lie in (0, 1]")
    k = math.ceil(target_tpr * pos.size - 1e-12)
    return float(pos[k - 1])


def fpr_at_tpr(pos, neg, target_tpr: float) -> float:
    """Empirical FPR of the rule ``score >= tau`` at the threshold from :func:`threshold_at_tpr`."""
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if neg.size == 0:
        raise ValueError("empty negative scores")
    tau = threshold_at_tpr(pos, target_tpr)
    return float(np.mean(neg >= tau))


def psnr(a, b, data_range: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over 8x8 windows (stride 1, reflect padding), averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    size = (1, SSIM_WINDOW, SSIM_WINDOW)

    def mean(z):
        return ndimage.uniform_filter(z, size=size, mode="reflect")

    mu_a, mu_b = mean(a), mean(b)
    var_a = mean(a * a) - mu_a**2
    var_b = mean(b * b) - mu_b**2
    cov = mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def majority_vote(bit_matrix) -> np.ndarray:
    """Per-bit majority over rows (seeds); the number of rows must be odd."""
    m = np.asarray(bit_matrix, dtype=np.int64)
    if m.ndim != 2:
        raise ValueError("bit matrix must be 2-D (seeds x bits)")
    if m.shape[0] % 2 == 0:
        raise ValueError("majority vote needs an odd number of seeds")
    return (2 * m.sum(axis=0) > m.shape[0]).astype(np.uint8)
