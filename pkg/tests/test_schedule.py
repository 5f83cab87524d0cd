import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dewst.schedule import (
    ContinuousSchedule,
    alpha_bar,
    constant_schedule,
    cosine_schedule,
    default_schedule,
    geometric_schedule,
    linear_schedule,
    mean_decay_factor,
    schedule_from_config,
    snr_from_alpha_bar,
    snr_theoretical,
)


def test_constant_alpha_bar():
    s = constant_schedule(0.1, T=10)
    assert alpha_bar(s, 0) == 1.0
    assert alpha_bar(s, 2) == pytest.approx(0.81, abs=1e-15)


def test_linear_terminal_alpha_bar():
    s = linear_schedule()
    # independent running product
    prod = 1.0
    for b in np.linspace(1e-4, 0.2, 100):
        prod *= 1.0 - b
    assert alpha_bar(s, 100) == pytest.approx(prod, abs=1e-12)
    assert 0.0 < alpha_bar(s, 100) < 0.05


@pytest.mark.parametrize("sched", [linear_schedule(), geometric_schedule(), cosine_schedule(), constant_schedule(0.05)])
def test_alpha_bar_invariants(sched):
    ab = sched.alpha_bars
    assert ab[0] == 1.0
    assert np.all(np.diff(ab) < 0)
    assert np.all((ab > 0) & (ab <= 1))
    running = np.concatenate([[1.0], np.cumprod(1.0 - sched.betas)])
    assert np.max(np.abs(ab - running)) < 1e-12


def test_alpha_bar_range_check():
    with pytest.raises(ValueError):
        alpha_bar(linear_schedule(), 101)
    with pytest.raises(ValueError):
        alpha_bar(linear_schedule(), -1)


def test_start_step_rounding():
    s = linear_schedule()
    assert [s.start_step(t) for t in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)] == [0, 20, 40, 60, 80, 100]


def test_snr_examples():
    assert snr_from_alpha_bar(0.5, 0.0) == 0.0
    assert snr_from_alpha_bar(0.5, 0.1) == pytest.approx(0.01, rel=1e-12)
    assert snr_from_alpha_bar(0.81, 0.1) == pytest.approx(0.042631578947368, rel=1e-12)
    assert math.isinf(snr_theoretical(default_schedule(), 0, 0.1))


@given(st.integers(1, 99), st.floats(1e-3, 1.0), st.floats(0.1, 10.0))
def test_snr_decreasing_and_quadratic(t, gamma, c):
    s = linear_schedule()
    assert snr_theoretical(s, t + 1, gamma) < snr_theoretical(s, t, gamma)
    assert snr_theoretical(s, t, c * gamma) == pytest.approx(c * c * snr_theoretical(s, t, gamma), rel=1e-12)


def test_mean_decay_examples():
    assert mean_decay_factor(ContinuousSchedule.constant(0.2), 0.0) == 1.0
    assert mean_decay_factor(ContinuousSchedule.constant(0.2), 10.0) == pytest.approx(math.exp(-1), rel=1e-12)
    assert mean_decay_factor(ContinuousSchedule.linear(0.0, 1.0), 2.0) == pytest.approx(math.exp(-1), rel=1e-12)
    with pytest.raises(ValueError):
        mean_decay_factor(ContinuousSchedule.constant(0.2), -1.0)


def test_continuous_integral_increasing():
    cs = ContinuousSchedule.linear(0.1, 0.5)
    ts = np.linspace(0, 5, 50)
    vals = [cs.integral(t) for t in ts]
    assert vals[0] == 0.0
    assert np.all(np.diff(vals) > 0)


@pytest.mark.parametrize("dt", [0.1, 0.01, 0.001])
def test_discrete_product_converges(dt):
    beta, t = 0.2, 10.0
    n = int(round(t / dt))
    prod = (1.0 - beta * dt) ** n
    target = mean_decay_factor(ContinuousSchedule.constant(beta), t) ** 2
    # first-order error: n*ln(1-b dt) = -b t - b^2 dt t/2 + ...
    assert abs(prod - target) <= 2.0 * beta**2 * t * dt * target


def test_schedule_from_config():
    s = schedule_from_config({"kind": "linear", "T": 50, "beta_start": 1e-3, "beta_end": 0.1})
    assert s.T == 50 and s.kind == "linear"
    c = schedule_from_config({"kind": "custom", "betas": [0.1, 0.2]})
    assert alpha_bar(c, 2) == pytest.approx(0.9 * 0.8)
    with pytest.raises(ValueError):
        schedule_from_config({"kind": "sigmoid"})
    with pytest.raises(ValueError):
        schedule_from_config({"kind": "custom", "betas": [0.1, 1.5]})


def test_default_is_geometric():
    s = default_schedule()
    assert s.kind == "geometric" and s.T == 100
    assert 1 - alpha_bar(s, 20) < 1e-3
