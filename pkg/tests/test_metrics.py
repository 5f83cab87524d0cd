import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dewst.metrics import bit_accuracy, fpr_at_tpr, majority_vote, psnr, roc_auc, ssim, threshold_at_tpr
from dewst.tensors_io import derive_stream, synth_image

scores = st.lists(st.integers(-20, 20), min_size=1, max_size=30)


def brute_fpr_at_tpr(pos, neg, tpr):
    """Scan every candidate threshold, keep the largest meeting the TPR target."""
    cands = sorted(set(pos) | set(neg), reverse=True)
    for tau in cands:
        if np.mean(np.asarray(pos) >= tau) >= tpr - 1e-12:
            return tau, float(np.mean(np.asarray(neg) >= tau))
    raise AssertionError


def test_bit_accuracy_examples():
    assert bit_accuracy([1, 0, 1, 1], [1, 0, 1, 1]) == (1.0, 0.0)
    assert bit_accuracy([1, 0, 1, 1], [0, 1, 0, 0]) == (0.0, 1.0)
    assert bit_accuracy([1, 0, 1, 0], [1, 0, 1, 1]) == (0.75, 0.25)
    with pytest.raises(ValueError):
        bit_accuracy([1, 0], [1, 0, 1])


@given(st.lists(st.integers(0, 1), min_size=1, max_size=64), st.integers(0, 2**31))
def test_bit_accuracy_symmetric(bits, seed):
    other = derive_stream(seed).bits(len(bits))
    assert bit_accuracy(bits, other) == bit_accuracy(other, bits)


def test_auc_examples():
    assert roc_auc([5, 6, 7], [1, 2, 3]) == 1.0
    assert roc_auc([1, 2, 2, 3], [1, 2, 2, 3]) == 0.5
    assert roc_auc([1, 3], [2]) == 0.5
    with pytest.raises(ValueError):
        roc_auc([], [1])


@given(scores, scores)
def test_auc_complement_and_pairwise(pos, neg):
    assert roc_auc(pos, neg) + roc_auc(neg, pos) == pytest.approx(1.0, abs=1e-12)
    pairs = [(p > n) + 0.5 * (p == n) for p, n in itertools.product(pos, neg)]
    assert roc_auc(pos, neg) == pytest.approx(float(np.mean(pairs)), abs=1e-12)


def test_fpr_examples():
    assert fpr_at_tpr([5, 6, 7, 8], [1, 2, 3], 0.95) == 0.0
    pos, neg = [2, 4, 6, 8, 10], [1, 3, 5, 7, 9]
    assert threshold_at_tpr(pos, 0.8) == 4
    assert fpr_at_tpr(pos, neg, 0.8) == brute_fpr_at_tpr(pos, neg, 0.8)[1] == 0.6


@pytest.mark.xfail(strict=True, reason="listed FPR 0.4 contradicts the listed threshold 4 (negatives 5, 7, 9 are >= 4)")
def test_fpr_listed_value():
    assert fpr_at_tpr([2, 4, 6, 8, 10], [1, 3, 5, 7, 9], 0.8) == 0.4


def test_fpr_identical_distributions():
    rng = derive_stream(3)
    pos, neg = rng.normal(4000), rng.normal(4000)
    assert fpr_at_tpr(pos, neg, 0.95) == pytest.approx(0.95, abs=3 * math.sqrt(0.95 * 0.05 / 4000) + 0.01)


@given(scores, scores, st.sampled_from([0.1, 0.5, 0.8, 0.95, 1.0]))
def test_fpr_matches_scan(pos, neg, tpr):
    tau, fpr = brute_fpr_at_tpr(pos, neg, tpr)
    assert threshold_at_tpr(pos, tpr) == tau
    assert fpr_at_tpr(pos, neg, tpr) == fpr


def test_fpr_errors():
    with pytest.raises(ValueError):
        fpr_at_tpr([], [1], 0.5)
    with pytest.raises(ValueError):
        fpr_at_tpr([1], [], 0.5)
    with pytest.raises(ValueError):
        fpr_at_tpr([1], [1], 0.0)


def test_psnr_examples():
    a = synth_image("gaussian_field", 16, 16, derive_stream(0))
    assert math.isinf(psnr(a, a))
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


@given(st.floats(1e-4, 0.5), st.floats(1.01, 3.0))
def test_psnr_decreasing_in_mse(off, k):
    a = np.zeros((1, 4, 4))
    assert psnr(a, a + off * k) < psnr(a, a + off)


def test_ssim_examples():
    a = synth_image("gaussian_field", 32, 32, derive_stream(0))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    yy, xx = np.indices((32, 32))
    chk = ((yy + xx) % 2).astype(float)[None]
    assert ssim(chk, 1.0 - chk) < -0.99


def test_ssim_independent_oracle():
    # loop-based reference on one window position, interior pixel
    rng = derive_stream(5)
    a = rng.uniform((1, 20, 20))
    b = np.clip(a + 0.1 * rng.normal((1, 20, 20)), 0, 1)
    from scipy import ndimage

    pad_a = np.pad(a[0], ((4, 4), (4, 4)), mode="symmetric")
    pad_b = np.pad(b[0], ((4, 4), (4, 4)), mode="symmetric")
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(20):
        for j in range(20):
            # uniform_filter with even size 8 covers offsets -4..3
            wa = pad_a[i:i + 8, j:j + 8]
            wb = pad_b[i:i + 8, j:j + 8]
            ma, mb = wa.mean(), wb.mean()
            va, vb = wa.var(), wb.var()
            cov = ((wa - ma) * (wb - mb)).mean()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    assert ssim(a, b) == pytest.approx(float(np.mean(vals)), abs=1e-10)


def test_majority_vote_examples():
    m = np.array([[1, 0, 1, 1]])
    assert np.array_equal(majority_vote(m), m[0])
    u = np.array([[1, 0, 1]] * 3)
    assert np.array_equal(majority_vote(u), u[0])
    two_of_three = np.array([[1, 0, 1, 0], [1, 1, 0, 0], [0, 0, 1, 1]])
    assert np.array_equal(majority_vote(two_of_three), [1, 0, 1, 0])
    with pytest.raises(ValueError):
        majority_vote(np.zeros((2, 4)))


@given(st.integers(0, 2**31))
def test_majority_vote_enumeration(seed):
    m = derive_stream(seed).bits(3 * 16).reshape(3, 16)
    expect = [int(sum(col) >= 2) for col in m.T]
    assert majority_vote(m).tolist() == expect
