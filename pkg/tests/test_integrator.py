import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtdcsim import integrator
from mtdcsim.analysis import droop_equilibrium, lyapunov_monotonicity
from mtdcsim.controllers import ControllerKind
from mtdcsim.errors import ConfigError, NumericalBlowupError, ValidationError
from mtdcsim.integrator import (IntegratorConfig, SystemState, closed_loop_rhs, rk4_step,
                                simulate, step)

from conftest import FIG1_V0, make_cfg

I_FIG1 = np.array([-60e3, -50e3, -50e3, -50e3])


def test_rk4_scalar_exponential():
    x = rk4_step(lambda v: -v, np.array([1.0]), 0.1)
    assert abs(x[0] - math.exp(-0.1)) < 1e-6
    assert x[0] == pytest.approx(0.9048375, abs=1e-7)


def test_step_at_equilibrium_only_advances_time(fig1):
    for kind in ControllerKind:
        cfg = make_cfg(kind)
        s0 = SystemState.at_rest(np.full(4, 100e3), t=0.25)
        s1 = step(fig1, cfg, np.zeros(4), s0, 1e-6)
        np.testing.assert_array_equal(s1.V, s0.V)
        np.testing.assert_array_equal(s1.z, s0.z)
        assert s1.t == 0.25 + 1e-6


def test_step_rejects_bad_input(fig1):
    cfg = make_cfg("droop")
    with pytest.raises(ValidationError):
        step(fig1, cfg, np.zeros(4), SystemState.at_rest(np.zeros(4)), 0.0)
    with pytest.raises(ValidationError):
        step(fig1, cfg, np.zeros(4), SystemState.at_rest(np.zeros(3)), 1e-6)
    with pytest.raises(ValidationError):
        SystemState(0.0, [np.nan, 0.0], [0.0, 0.0])


def test_step_names_failing_stage(fig1):
    cfg = make_cfg("droop")
    s0 = SystemState.at_rest(np.full(4, 1e300))
    s0 = SystemState(0.0, np.array([1e300, -1e300, 1e300, -1e300]), np.zeros(4))
    with pytest.raises(NumericalBlowupError) as info:
        step(fig1, cfg, np.zeros(4), s0, 1.0)
    assert info.value.stage in {"k1", "k2", "k3", "k4", "update"}
    assert info.value.t == 0.0


@pytest.mark.parametrize("kind", list(ControllerKind))
def test_kernel_step_matches_vectorised_step(fig1, backend, kind):
    cfg = make_cfg(kind)
    rng = np.random.default_rng(7)
    for _ in range(20):
        V = rng.uniform(93e3, 107e3, 4)
        z = rng.uniform(-50, 50, 4)
        I = rng.uniform(-5e4, 5e4, 4)
        h = 1e-5
        ref = step(fig1, cfg, I, SystemState(0.0, V, z), h)
        icfg = IntegratorConfig(step=h, horizon=h, stop_at_steady=False)
        tr = simulate(fig1, cfg, I, SystemState(0.0, V, z), icfg, backend=backend)
        assert tr.t[-1] == h
        scale = np.max(np.abs(V))
        assert np.max(np.abs(tr.V[-1] - ref.V)) <= 1e-12 * scale
        if kind is not ControllerKind.DROOP:
            assert np.max(np.abs(tr.z[-1] - ref.z)) <= 1e-12 * max(np.max(np.abs(z)), 1.0)


def test_backends_bit_identical(fig1):
    if len(integrator.KERNELS) < 2:
        pytest.skip("compiled kernel not built")
    for kind in ControllerKind:
        cfg = make_cfg(kind)
        a = simulate(fig1, cfg, I_FIG1, SystemState.at_rest(FIG1_V0), backend="cython")
        b = simulate(fig1, cfg, I_FIG1, SystemState.at_rest(FIG1_V0), backend="python")
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_array_equal(a.V, b.V)
        np.testing.assert_array_equal(a.z, b.z)


def test_deterministic(fig1, backend):
    cfg = make_cfg("deadband-pi")
    runs = [simulate(fig1, cfg, I_FIG1, SystemState.at_rest(FIG1_V0), backend=backend) for _ in range(2)]
    np.testing.assert_array_equal(runs[0].V, runs[1].V)
    np.testing.assert_array_equal(runs[0].z, runs[1].z)


def test_unknown_backend(fig1):
    with pytest.raises(ConfigError):
        simulate(fig1, make_cfg("droop"), np.zeros(4), SystemState.at_rest(FIG1_V0), backend="fortran")


@pytest.mark.parametrize("kind", list(ControllerKind))
def test_zero_disturbance_stays_at_nominal(fig1, kind):
    cfg = make_cfg(kind)
    icfg = IntegratorConfig(stop_at_steady=False)
    tr = simulate(fig1, cfg, np.zeros(4), SystemState.at_rest(np.full(4, 100e3)), icfg)
    assert len(tr) == icfg.horizon_steps + 1
    assert np.all(tr.V == 100e3) and np.all(tr.z == 0)
    early = simulate(fig1, cfg, np.zeros(4), SystemState.at_rest(np.full(4, 100e3)))
    assert early.converged and early.steps == 0 and len(early) == 1


def test_time_grid(fig1):
    icfg = IntegratorConfig(step=2e-6, horizon=1e-3, record_stride=10, stop_at_steady=False)
    tr = simulate(fig1, make_cfg("droop"), I_FIG1, SystemState.at_rest(FIG1_V0), icfg)
    assert tr.steps == 500
    assert np.all(np.diff(tr.t) > 0)
    np.testing.assert_allclose(np.diff(tr.t), 2e-5, rtol=1e-9)
    assert tr.t[-1] == pytest.approx(1e-3, rel=1e-12)


def test_until_steady_extension_spacing(fig1):
    icfg = IntegratorConfig(step=1e-6, horizon=1e-4, until_steady=True, max_time=0.2, tail_stride=500)
    tr = simulate(fig1, make_cfg("droop"), I_FIG1, SystemState.at_rest(FIG1_V0), icfg)
    assert tr.converged and tr.t[-1] > 1e-4
    d = np.diff(tr.t)
    assert np.all(d > 0)
    np.testing.assert_allclose(d[:99], 1e-6, rtol=1e-6)
    np.testing.assert_allclose(d[100:-1], 5e-4, rtol=1e-9)


def test_droop_endpoint_matches_linear_solve(fig1, backend):
    cfg = make_cfg("droop")
    icfg = IntegratorConfig(until_steady=True, max_time=0.5 if backend == "cython" else 0.05,
                            tail_stride=1000, step=1e-6 if backend == "cython" else 1e-5)
    tr = simulate(fig1, cfg, I_FIG1, SystemState.at_rest(FIG1_V0), icfg, backend=backend)
    assert tr.converged
    V_eq = droop_equilibrium(fig1, cfg.K_P, cfg.V_nom, I_FIG1)
    assert np.max(np.abs(tr.V[-1] - V_eq)) / np.max(np.abs(V_eq)) < 1e-6


def test_droop_error_norm_decreasing(fig1):
    cfg = make_cfg("droop")
    icfg = IntegratorConfig(horizon=10e-3, record_stride=10, stop_at_steady=False)
    tr = simulate(fig1, cfg, I_FIG1, SystemState.at_rest(FIG1_V0), icfg)
    V_eq = droop_equilibrium(fig1, cfg.K_P, cfg.V_nom, I_FIG1)
    err = np.linalg.norm(tr.V - V_eq, axis=1)
    assert np.all(np.diff(err) <= 1e-9 * err[0])
    assert err[-1] < 1e-3 * err[0]


def _final(top, cfg, I, h, T):
    icfg = IntegratorConfig(step=h, horizon=T, stop_at_steady=False)
    return simulate(top, cfg, I, SystemState.at_rest(FIG1_V0), icfg).V[-1]


def test_richardson_order_droop(fig1):
    cfg = make_cfg("droop")
    T = 1e-3
    x1, x2, x4 = (_final(fig1, cfg, I_FIG1, h, T) for h in (1e-4, 5e-5, 2.5e-5))
    e1 = np.max(np.abs(x1 - x2))
    e2 = np.max(np.abs(x2 - x4))
    assert e1 / e2 >= 8
    assert math.log2(e1 / e2) >= 3.8


def test_pi_reaches_nominal(fig1):
    cfg = make_cfg("pi")
    I = np.array([100.0, -40.0, -30.0, -30.0])
    icfg = IntegratorConfig(step=1e-5, until_steady=True, steady_state_tol=1e-4, max_time=60)
    tr = simulate(fig1, cfg, I, SystemState.at_rest(FIG1_V0), icfg)
    assert tr.converged
    assert np.max(np.abs(tr.V[-1] - 100e3)) < 1e-3


def test_blowup_reports_time_stage_and_partial_trajectory(fig1, backend):
    cfg = make_cfg("droop")
    icfg = IntegratorConfig(step=1.0, horizon=200.0, stop_at_steady=False)
    with pytest.raises(NumericalBlowupError) as info:
        simulate(fig1, cfg, I_FIG1, SystemState.at_rest(FIG1_V0), icfg, backend=backend)
    exc = info.value
    assert exc.stage in {"k1", "k2", "k3", "k4", "update"}
    assert exc.t is not None and 0 < exc.t < 200
    tr = exc.trajectory
    assert len(tr) > 1 and np.all(np.isfinite(tr.V))
    assert tr.t[-1] == exc.t


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_deadband_lyapunov_nonincreasing_short_runs(seed):
    rng = np.random.default_rng(seed)
    from conftest import FIG1_EDGES
    from mtdcsim.grid import GridTopology
    top = GridTopology.uniform(4, FIG1_EDGES, 3.7)
    cfg = make_cfg("deadband-pi")
    I = rng.uniform(-8e4, 8e4, 4)
    V0 = rng.uniform(90e3, 110e3, 4)
    z0 = rng.uniform(-500, 500, 4)
    icfg = IntegratorConfig(horizon=3e-3, stop_at_steady=False)
    tr = simulate(top, cfg, I, SystemState(0.0, V0, z0), icfg)
    assert lyapunov_monotonicity(tr).nonincreasing


def test_closed_loop_rhs_charge_balance(fig1):
    from mtdcsim.grid import charge_balance_residual
    cfg = make_cfg("deadband-pi")
    tr = simulate(fig1, cfg, I_FIG1, SystemState.at_rest(FIG1_V0))
    for k in range(0, len(tr), 50):
        assert charge_balance_residual(fig1, tr.V[k], I_FIG1, tr.u[k]) < 1e-9
    dV, dz = closed_loop_rhs(fig1, cfg, I_FIG1, tr.V[-1], tr.z[-1])
    np.testing.assert_array_equal(dV, tr.derivatives()[0])


def test_integrator_config_validation():
    with pytest.raises(ConfigError):
        IntegratorConfig(step=0.0)
    with pytest.raises(ConfigError):
        IntegratorConfig(step=1e-3, horizon=1e-4)
    with pytest.raises(ConfigError):
        IntegratorConfig(steady_state_tol=0.0)
    with pytest.raises(ConfigError):
        IntegratorConfig(record_stride=0)
