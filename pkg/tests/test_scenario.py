import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtdcsim.controllers import ControllerConfig, ControllerKind
from mtdcsim.errors import ScenarioError
from mtdcsim.integrator import IntegratorConfig, SystemState
from mtdcsim.scenario import (Scenario, apply_overlay, apply_overlay_text, emit_overlay,
                              emit_scenario, parse_scenario, parse_scenario_text, write_scenario)

from conftest import FIG1_V0, random_topology

BASE = """mtdc-scenario 1
[grid]
terminals = 2
capacitance = 10 mF

[lines]
1-2 = 2 ohm

[controller]
kind = deadband-pi
k_p = 10 S
k_i = 5 A/Vs
v_nom = 100 kV
v_lo = 95 kV
v_hi = 105 kV

[injection]
current = 1 kA, -500 A
"""


def test_bundled_scenario(scenario):
    assert scenario.n_terminals == 4
    assert scenario.topology.n_lines == 5
    assert all(r == 3.7 for _, _, r in scenario.topology.lines)
    c = scenario.controller
    assert c.kind is ControllerKind.DEADBAND_PI
    np.testing.assert_array_equal(c.K_P, 10.0)
    np.testing.assert_array_equal(c.V_lo, 95e3)
    np.testing.assert_array_equal(c.V_hi, 105e3)
    np.testing.assert_allclose(scenario.initial.V, FIG1_V0, rtol=1e-15)
    np.testing.assert_array_equal(scenario.initial.z, 0.0)
    assert scenario.integrator.step == 1e-6
    assert scenario.integrator.until_steady


def test_minimal_scenario_defaults():
    s = parse_scenario_text(BASE)
    np.testing.assert_array_equal(s.I_inj, [1000.0, -500.0])
    np.testing.assert_array_equal(s.initial.V, [100e3, 100e3])
    assert s.integrator == IntegratorConfig()
    assert s.topology.capacitances == (0.01, 0.01)


def _error(text):
    with pytest.raises(ScenarioError) as info:
        parse_scenario_text(text, "x.scn")
    return info.value


def test_rejects_inverted_band_naming_terminal():
    err = _error(BASE.replace("v_lo = 95 kV", "v_lo = 95 kV, 106 kV"))
    assert "terminal 2" in str(err)
    assert err.line == BASE.splitlines().index("v_lo = 95 kV") + 1
    assert str(err).startswith("x.scn:")


def test_rejects_duplicate_line():
    err = _error(BASE.replace("1-2 = 2 ohm", "1-2 = 2 ohm\n2-1 = 3 ohm"))
    assert "duplicate line" in str(err) and err.line == 8


def test_rejects_missing_key():
    err = _error(BASE.replace("k_p = 10 S\n", ""))
    assert "k_p" in str(err) and err.line is not None


def test_rejects_unknown_key():
    err = _error(BASE.replace("k_p = 10 S", "k_p = 10 S\nk_d = 1 S"))
    assert "k_d" in str(err) and err.line == 12


@pytest.mark.parametrize("bad, needle", [
    ("k_p = 10 V", "unit"),
    ("k_p = 10", "missing unit"),
    ("k_p = ten S", "cannot parse"),
])
def test_rejects_bad_quantities(bad, needle):
    err = _error(BASE.replace("k_p = 10 S", bad))
    assert needle in str(err) and err.line == 11


def test_rejects_structure_errors():
    assert "header" in str(_error(BASE.replace("mtdc-scenario 1", "scenario")))
    assert "version" in str(_error(BASE.replace("mtdc-scenario 1", "mtdc-scenario 2")))
    assert "unknown section" in str(_error(BASE + "[plots]\n"))
    assert "duplicate key" in str(_error(BASE.replace("kind = deadband-pi", "kind = pi\nkind = pi")))
    assert "outside 1..2" in str(_error(BASE.replace("1-2 =", "1-3 =")))
    assert "expected 1 or 2" in str(_error(BASE.replace("1 kA, -500 A", "1 kA, 2 kA, 3 kA")))
    assert "not connected" in str(_error(BASE.replace("terminals = 2", "terminals = 3")))


def test_parse_file_errors(tmp_path):
    with pytest.raises(ScenarioError):
        parse_scenario(tmp_path / "missing.scn")


def test_unit_round_trip_kv():
    rng = np.random.default_rng(5)
    for v in map(float, rng.uniform(1, 1000, 200)):
        text = BASE.replace("v_nom = 100 kV", f"v_nom = {v!r} kV").replace("v_lo = 95 kV", "v_lo = 0 V") \
                   .replace("v_hi = 105 kV", "v_hi = 1 MV")
        s = parse_scenario_text(text)
        back = s.controller.V_nom[0] / 1e3
        assert abs(back - v) <= np.spacing(v)


def test_emit_parse_bundled_exact(scenario, tmp_path):
    assert parse_scenario_text(emit_scenario(scenario)) == scenario
    p = tmp_path / "s.scn"
    write_scenario(scenario, p)
    assert parse_scenario(p) == scenario


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(list(ControllerKind)))
def test_emit_parse_round_trip_random(seed, kind):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    top = random_topology(rng, n) if n > 1 else random_topology(rng, 1, extra=0)
    lo = rng.uniform(80e3, 99e3, n)
    hi = rng.uniform(101e3, 120e3, n)
    cfg = ControllerConfig(kind, rng.uniform(0.1, 50, n), 100e3,
                           K_I=0.0 if kind is ControllerKind.DROOP else rng.uniform(0.1, 50, n),
                           V_lo=lo, V_hi=hi, n_terminals=n)
    icfg = IntegratorConfig(step=float(rng.uniform(1e-7, 1e-5)), horizon=1e-3,
                            record_stride=int(rng.integers(1, 10)), until_steady=bool(rng.integers(2)),
                            tail_stride=None if rng.integers(2) else int(rng.integers(1, 100)))
    s = Scenario(top, cfg, rng.uniform(-1e5, 1e5, n),
                 SystemState(0.0, rng.uniform(90e3, 110e3, n), rng.uniform(-10, 10, n)), icfg)
    assert parse_scenario_text(emit_scenario(s)) == s


def test_overlay_round_trip(scenario, tmp_path):
    I = np.array([-51051.0, -51051.0, -51051.0, 1.0 / 3.0])
    V = np.full(4, 100e3)
    text = emit_overlay(I, SystemState(0.0, V, np.zeros(4)), comment="test\nsecond line")
    assert text.startswith("mtdc-overlay 1\n# test\n# second line")
    s = apply_overlay_text(scenario, text)
    np.testing.assert_array_equal(s.I_inj, I)
    np.testing.assert_array_equal(s.initial.V, V)
    assert s.controller == scenario.controller and s.topology == scenario.topology
    p = tmp_path / "o.scn"
    p.write_text(emit_overlay(I))
    s2 = apply_overlay(scenario, p)
    np.testing.assert_array_equal(s2.I_inj, I)
    np.testing.assert_array_equal(s2.initial.V, scenario.initial.V)


def test_overlay_rejects_other_sections(scenario):
    with pytest.raises(ScenarioError, match="not allowed"):
        apply_overlay_text(scenario, "mtdc-overlay 1\n[grid]\nterminals = 4\n")
    with pytest.raises(ScenarioError, match="header"):
        apply_overlay_text(scenario, BASE)


def test_with_controller(scenario):
    s = scenario.with_controller("droop")
    assert s.controller.kind is ControllerKind.DROOP
    assert s != scenario
    assert scenario.with_injection(scenario.I_inj) == scenario
