import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dewst.edit_kernel import (
    IDENTITY_EDIT,
    EditConfig,
    coupled_edit,
    denoise_from,
    denoise_step,
    edit,
    forward_noise,
    make_anchor,
    ou_simulate,
    ou_simulate_coupled,
)
from dewst.metrics import psnr
from dewst.schedule import ContinuousSchedule, constant_schedule, default_schedule, linear_schedule
from dewst.spectral import BANDS, apply_band_gains, band_energies, project
from dewst.tensors_io import derive_stream, synth_image
from dewst.watermark import WatermarkKey, ecc_encode, embed, make_carriers, watermark_signal

SCHED = default_schedule()


@pytest.fixture(scope="module")
def setup():
    bank = make_carriers(WatermarkKey(1), 96, 32, 32)
    x = synth_image("gaussian_field", 32, 32, derive_stream(0))
    coded = ecc_encode(derive_stream(1).bits(32))
    gamma = 0.01
    s = watermark_signal(coded.coded_bits, bank)
    return x, x + gamma * s, gamma * s


def test_config_validation():
    for bad in (dict(t_star=1.5), dict(band_gains=(1.0, 0.0, 0.5)), dict(mode="blur"), dict(coupling_kappa=2.0), dict(n_steps=-1)):
        with pytest.raises(ValueError):
            EditConfig(**bad)
    with pytest.raises(ValueError):
        EditConfig(mask=np.full((4, 4), 0.5))


def test_forward_noise_zero():
    x = synth_image("gaussian_field", 16, 16, derive_stream(0))
    y, ab = forward_noise(x, SCHED, 0.0, derive_stream(1))
    assert ab == 1.0 and np.array_equal(y, x)


def test_forward_noise_coupling(setup):
    x, xw, delta = setup
    a, ab = forward_noise(xw, SCHED, 0.6, derive_stream(5))
    b, _ = forward_noise(x, SCHED, 0.6, derive_stream(5))
    assert np.allclose(a - b, math.sqrt(ab) * delta, rtol=0, atol=1e-14)


def test_forward_noise_pure_noise_moments():
    sched = constant_schedule(0.5, T=100)
    x = synth_image("gaussian_field", 64, 64, derive_stream(0))
    y, ab = forward_noise(x, sched, 1.0, derive_stream(2))
    assert ab < 1e-25
    assert abs(y.mean()) < 0.05
    assert y.var() == pytest.approx(1.0, rel=0.05)


def test_denoise_identity_gains():
    y = derive_stream(0).normal((3, 16, 16))
    anchor = make_anchor(y, 2.0)
    assert np.max(np.abs(denoise_step(y, anchor, (1, 1, 1)) - y)) < 1e-12


def test_high_band_residual_halves():
    delta = project(derive_stream(0).normal((3, 32, 32)), "high")
    y0 = derive_stream(1).normal((3, 32, 32))
    anchor = make_anchor(y0, 2.0)
    a, b = y0 + delta, y0
    prev = np.linalg.norm(delta)
    for _ in range(4):
        a, b = denoise_step(a, anchor, (0.9, 0.8, 0.5)), denoise_step(b, anchor, (0.9, 0.8, 0.5))
        cur = np.linalg.norm(a - b)
        assert cur == pytest.approx(0.5 * prev, abs=1e-9)
        prev = cur


@given(st.integers(0, 2**31), st.integers(1, 6), st.tuples(*[st.floats(0.05, 1.0)] * 3))
def test_n_step_contraction(seed, n, gains):
    rng = derive_stream(seed)
    y, delta = rng.normal((1, 16, 16)), rng.normal((1, 16, 16))
    anchor = make_anchor(y, 2.0)
    a, b = y + delta, y
    for _ in range(n):
        a, b = denoise_step(a, anchor, gains), denoise_step(b, anchor, gains)
    assert np.linalg.norm(a - b) <= max(gains) ** n * np.linalg.norm(delta) * (1 + 1e-9)


def test_identity_edit(setup):
    x, _, _ = setup
    out = edit(x, IDENTITY_EDIT, SCHED, derive_stream(0))
    assert np.array_equal(out.edited, x)
    assert out.realized_alpha_bar == 1.0 and out.start_step == 0


def test_default_edit_psnr_band():
    vals = []
    for i in range(5):
        x = synth_image("gaussian_field", 64, 64, derive_stream(i))
        vals.append(psnr(x, edit(x, EditConfig(t_star=0.4), SCHED, derive_stream(50 + i)).edited))
    assert all(20.0 <= v <= 35.0 for v in vals)


def test_edit_deterministic(setup):
    x, _, _ = setup
    cfg = EditConfig(mode="resynth")
    a = edit(x, cfg, SCHED, derive_stream(3)).edited
    b = edit(x, cfg, SCHED, derive_stream(3)).edited
    assert np.array_equal(a, b)


def test_mask_kappa_zero_outside_untouched(setup):
    x, _, _ = setup
    mask = np.zeros((32, 32))
    mask[8:24, 8:24] = 1
    out = edit(x, EditConfig(mask=mask, coupling_kappa=0.0), SCHED, derive_stream(0)).edited
    assert np.array_equal(out[:, mask == 0], x[:, mask == 0])
    assert not np.allclose(out[:, mask == 1], x[:, mask == 1])


def test_mask_shape_mismatch(setup):
    x, _, _ = setup
    with pytest.raises(ValueError):
        edit(x, EditConfig(mask=np.ones((16, 16))), SCHED, derive_stream(0))


def test_coupled_zero_gamma(setup):
    x, _, _ = setup
    for mode in ("linear_shrink", "resynth"):
        out = coupled_edit(x.copy(), x, EditConfig(mode=mode), SCHED, derive_stream(0))
        assert np.array_equal(out.edited, out.baseline_edited)


def test_coupled_single_step_uniform_gain(setup):
    x, xw, delta = setup
    g = 0.7
    out = coupled_edit(xw, x, EditConfig(t_star=0.5, n_steps=1, band_gains=(g, g, g)), SCHED, derive_stream(0))
    expect = g * math.sqrt(out.realized_alpha_bar) * delta
    assert np.max(np.abs(out.residual - expect)) < 1e-9


def test_coupled_log_starts_at_noised_difference(setup):
    x, xw, delta = setup
    out = coupled_edit(xw, x, EditConfig(t_star=0.6), SCHED, derive_stream(0))
    assert out.step_log[0] == pytest.approx(math.sqrt(out.realized_alpha_bar) * np.linalg.norm(delta), rel=1e-9)
    assert len(out.step_log) == 1 + 5


def test_resynth_kills_high_band_residual(setup):
    x, xw, delta = setup
    out = coupled_edit(xw, x, EditConfig(t_star=0.4, mode="resynth"), SCHED, derive_stream(0))
    assert band_energies(out.residual)["high"] < 0.05 * band_energies(delta)["high"]


def test_markov_property(setup):
    x, xw, _ = setup
    cfg = EditConfig(t_star=1.0, mode="resynth")
    cond = x
    anchor = make_anchor(cond, cfg.anchor_sigma)
    full = edit(xw, cfg, SCHED, derive_stream(9), condition=cond).edited
    rng = derive_stream(9)
    x_t, _ = forward_noise(xw, SCHED, 1.0, rng)
    assert np.array_equal(denoise_from(x_t, cfg, anchor, rng), full)
    # a different clean image forced onto the same noised state gives the same output
    other = synth_image("checker", 32, 32, derive_stream(0))
    rng_o = derive_stream(9)
    forward_noise(other, SCHED, 1.0, rng_o)  # consume the same draws, then inject x_t
    assert np.array_equal(denoise_from(x_t, cfg, anchor, rng_o), full)


@given(st.integers(0, 2**31), st.sampled_from([0.2, 0.4, 0.6, 0.8]), st.integers(0, 6))
def test_linear_mode_exactness(seed, t_star, n):
    rng = derive_stream(seed)
    x = synth_image("gaussian_field", 16, 16, rng.child(0))
    delta = 0.05 * rng.child(1).normal(x.shape)
    cfg = EditConfig(t_star=t_star, n_steps=n)
    a = edit(x + delta, cfg, SCHED, derive_stream(seed, [2]), condition=x)
    b = edit(x, cfg, SCHED, derive_stream(seed, [2]), condition=x)
    expect = math.sqrt(a.realized_alpha_bar) * delta
    for _ in range(n):
        expect = apply_band_gains(expect, cfg.band_gains)
    diff = a.edited - b.edited
    assert np.linalg.norm(diff - expect) <= 1e-9 * np.linalg.norm(expect)


@pytest.mark.parametrize("mode", ["linear_shrink", "resynth"])
def test_contraction_bound(setup, mode):
    x, xw, delta = setup
    for t in (0.2, 0.4, 0.6, 0.8):
        cfg = EditConfig(t_star=t, mode=mode)
        out = coupled_edit(xw, x, cfg, SCHED, derive_stream(1))
        bound = cfg.contraction_factor**cfg.n_steps * math.sqrt(out.realized_alpha_bar) * np.linalg.norm(delta)
        assert np.linalg.norm(out.residual) <= bound * (1 + 1e-9)


def test_uniform_gain_bound_is_tight(setup):
    x, xw, delta = setup
    rho = 0.8
    cfg = EditConfig(t_star=0.6, band_gains=(rho,) * 3)
    out = coupled_edit(xw, x, cfg, SCHED, derive_stream(1))
    bound = rho**cfg.n_steps * math.sqrt(out.realized_alpha_bar) * np.linalg.norm(delta)
    assert np.linalg.norm(out.residual) == pytest.approx(bound, rel=1e-6)


def test_residual_monotone_in_t_star(setup):
    x, xw, _ = setup
    norms = [np.linalg.norm(coupled_edit(xw, x, EditConfig(t_star=t), SCHED, derive_stream(1)).residual) for t in (0, 0.2, 0.4, 0.6, 0.8)]
    assert all(b <= a for a, b in zip(norms, norms[1:]))


def test_ou_zero_beta():
    x0 = derive_stream(0).normal(10)
    assert np.array_equal(ou_simulate(x0, ContinuousSchedule.constant(0.0), 1.0, derive_stream(1)), x0)


@pytest.mark.parametrize("cs", [ContinuousSchedule.constant(0.2), ContinuousSchedule.linear(0.0, 0.04)])
def test_ou_coupled_difference(cs):
    t, dt = 10.0, 0.01
    x0 = derive_stream(0).normal(50)
    s = derive_stream(1).normal(50)
    a, b = ou_simulate_coupled(x0 + 0.1 * s, x0, cs, t, derive_stream(2), dt)
    expect = 0.1 * math.exp(-0.5 * cs.integral(t)) * s
    # Euler drift product vs exponential: relative error O(beta * dt)
    assert np.max(np.abs(a - b - expect)) <= 2 * dt * np.max(np.abs(expect))


def test_ou_mean_e_inverse():
    cs = ContinuousSchedule.constant(0.2)
    out = ou_simulate(np.ones(10_000), cs, 10.0, derive_stream(3))
    stderr = out.std(ddof=1) / math.sqrt(out.size)
    assert abs(out.mean() - math.exp(-1)) <= max(3 * stderr, 2 * 0.01)


def test_ou_dt_checks():
    cs = ContinuousSchedule.constant(0.2)
    with pytest.raises(ValueError):
        ou_simulate(np.ones(3), cs, 1.0, derive_stream(0), dt=0.0)
    with pytest.raises(ValueError):
        ou_simulate(np.ones(3), cs, 1.0, derive_stream(0), dt=0.5)
