import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sasgld.controller import (ControllerState, monitor_value, next_timestep, psi, psi_array,
                               update_monitor)
from sasgld.core import ControllerConfig
from sasgld.oracles import GradientEstimate

configs = st.builds(
    lambda m, ratio, r, s: ControllerConfig(alpha=1.0, r=r, s=s, m=m, M=m * ratio),
    st.floats(0.01, 5.0), st.floats(1.01, 100.0), st.floats(0.05, 4.0), st.floats(0.01, 100.0))


def test_monitor_frozen_as_rho_tends_to_one():
    st_ = ControllerState.create(ControllerConfig(alpha=1.0), 1e-12, zeta=3.0)
    assert st_.rho == pytest.approx(1.0, abs=1e-11)
    assert update_monitor(st_, 5.0).zeta == pytest.approx(3.0, rel=1e-9)


def test_small_alpha_integrates_monitor():
    # (1 - rho)/alpha -> dtau as alpha -> 0, so the monitor accumulates g * dtau
    st_ = ControllerState.create(ControllerConfig(alpha=1e-12), 0.1, zeta=3.0)
    assert update_monitor(st_, 5.0).zeta == pytest.approx(3.5, rel=1e-6)


def test_constant_input_reaches_fixed_point():
    cfg = ControllerConfig(alpha=2.0)
    dtau, g = 0.05, 7.0
    s = ControllerState.create(cfg, dtau)
    for _ in range(int(10 / (cfg.alpha * dtau))):
        s = update_monitor(s, g)
    assert abs(s.zeta - g / cfg.alpha) < 1e-4 * g / cfg.alpha


def test_large_alpha_forgets_in_one_step():
    s = ControllerState.create(ControllerConfig(alpha=1000.0), 0.2, zeta=123.0)
    assert s.rho < 1e-80
    g = 4.2
    assert update_monitor(s, g).zeta == pytest.approx(g / 1000.0, rel=1e-15)


def test_negative_monitor_rejected():
    with pytest.raises(ValueError):
        update_monitor(ControllerState.create(ControllerConfig(), 0.1), -1.0)


def test_monitor_value_examples():
    assert monitor_value(GradientEstimate(np.zeros(3)), 1e-8) == 1e-8
    assert monitor_value(np.array([3.0, 4.0]), 0.0) == 25.0


def test_monitor_value_of_network_gradient():
    from sasgld import bnn
    spec = bnn.MlpSpec((20, 8, 10))
    rng = np.random.default_rng(0)
    theta = bnn.init_params(spec, rng)
    _, g = bnn.mlp_backward(spec, theta, rng.uniform(0, 1, (16, 20)), rng.integers(0, 10, 16))
    val = monitor_value(g, 1e-8)
    assert np.isfinite(val) and val > 0
    assert val == pytest.approx(sum(x * x for x in g) + 1e-8, rel=1e-12)


def test_psi_limits():
    cfg = ControllerConfig(r=0.5, s=1.0, m=0.5, M=2.0)
    assert psi(0.0, cfg) == 2.0
    assert abs(psi(1e12, cfg) - 0.5) < 1e-3 * 0.5
    # (s zeta)^r = 1 gives the midpoint
    assert psi(1.0, cfg) == (0.5 + 2.0) / 2
    cfg2 = ControllerConfig(r=0.25, s=2.0, m=0.5, M=2.0)
    assert psi(0.5, cfg2) == 1.25


def test_psi_matches_ratio_form():
    cfg = ControllerConfig(r=0.7, s=3.0, m=0.3, M=4.0)
    for z in (1e-6, 0.01, 1.0, 50.0):
        q = (cfg.s * z) ** cfg.r
        assert psi(z, cfg) == pytest.approx(cfg.m * (q + cfg.M / cfg.m) / (q + 1), rel=1e-14)


def test_psi_rejects_negative_zeta():
    with pytest.raises(ValueError):
        psi(-1.0, ControllerConfig())


def test_next_timestep_examples():
    cfg = ControllerConfig(r=0.5, s=1.0, m=0.5, M=2.0)
    for z in (0.0, 1e-3, 1.0, 1e3, 1e9):
        dt = next_timestep(ControllerState.create(cfg, 0.2, z), 0.2)
        assert 0.1 <= dt <= 0.4
    assert next_timestep(ControllerState.create(cfg, 0.2, 0.0), 0.2) == 2.0 * 0.2
    assert abs(next_timestep(ControllerState.create(cfg, 0.2, 1e8), 0.2) - 0.1) < 1e-3


@settings(max_examples=300, deadline=None)
@given(configs, st.floats(0, 1e6), st.floats(0, 1e6))
def test_psi_monotone_decreasing(cfg, z1, z2):
    lo, hi = sorted((z1, z2))
    assert psi(lo, cfg) >= psi(hi, cfg)
    q_lo, q_hi = (cfg.s * lo) ** cfg.r, (cfg.s * hi) ** cfg.r
    gap = (cfg.M - cfg.m) * (q_hi - q_lo) / ((1 + q_lo) * (1 + q_hi))
    if gap > 1e-9 * cfg.M:  # strict wherever the difference is representable
        assert psi(lo, cfg) > psi(hi, cfg)


def test_psi_bounds_random_pairs():
    rng = np.random.default_rng(0)
    n = 10**6
    m = rng.uniform(0.01, 5, n)
    M = m * rng.uniform(1.001, 100, n)
    r = rng.uniform(0.05, 4, n)
    s = rng.uniform(0.01, 100, n)
    z = 10 ** rng.uniform(-12, 12, n)
    q = (s * z) ** r
    val = np.clip(m + (M - m) / (q + 1), m, M)
    assert np.all((val >= m) & (val <= M))
    # spot-check the scalar and array paths agree
    for i in range(0, n, 100_000):
        cfg = ControllerConfig(r=r[i], s=s[i], m=m[i], M=M[i])
        assert psi(z[i], cfg) == psi_array(z[i], cfg)
        assert m[i] <= psi(z[i], cfg) <= M[i]


def _max_slope(cfg, z):
    p = psi_array(z, cfg)
    return np.max(np.abs(np.diff(p)) / np.diff(z))


def test_psi_lipschitz_for_r_at_least_one():
    cfg = ControllerConfig(r=1.0, s=2.0, m=0.5, M=2.0)
    z = np.linspace(0, 50, 200_001)
    # for r = 1 the steepest slope is at zero: (M - m) s
    assert _max_slope(cfg, z) <= (cfg.M - cfg.m) * cfg.s * (1 + 1e-6)


def test_psi_lipschitz_on_floored_domain():
    cfg = ControllerConfig(alpha=1.0, r=0.25, s=2.0, m=0.5, M=2.0, delta=1e-8)
    rho = math.exp(-cfg.alpha * 0.1)
    z0 = (1 - rho) * cfg.delta / cfg.alpha
    coarse = _max_slope(cfg, np.geomspace(z0, 1e3, 100_001))
    fine = _max_slope(cfg, np.geomspace(z0, 1e3, 400_001))
    assert np.isfinite(coarse) and fine == pytest.approx(coarse, rel=1e-3)
    # the slope bound blows up as the floor goes to zero when r < 1
    assert _max_slope(cfg, np.geomspace(z0 * 1e-8, 1e3, 100_001)) > 10 * coarse


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 100), st.floats(1e-3, 10), st.floats(1e-4, 1),
       st.lists(st.floats(0, 1e3), min_size=1, max_size=20))
def test_zeta_stays_positive(zeta0, alpha, dtau, extra):
    cfg = ControllerConfig(alpha=alpha, delta=1e-8)
    s = ControllerState.create(cfg, dtau, zeta0)
    floor = min(zeta0, (1 - s.rho) * cfg.delta / alpha)
    for e in extra:
        s = update_monitor(s, e + cfg.delta)
        assert s.zeta >= (1 - s.rho) * cfg.delta / alpha * (1 - 1e-12)
        assert s.zeta > 0
    assert s.zeta >= floor * (1 - 1e-12)
