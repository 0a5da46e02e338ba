import csv
import json

import numpy as np
import pytest

from mtdcsim.cli import main
from mtdcsim.scenario import apply_overlay, bundled_scenario_path, emit_overlay, parse_scenario

SCN = str(bundled_scenario_path())


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_simulate_writes_csvs_and_report(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["simulate", SCN, "--out", str(out), "--no-until-steady", "--record-stride", "10"])
    assert code == 0
    header, v = read_csv(out / "voltages.csv")
    assert header == ["t_ms", "V1_kV", "V2_kV", "V3_kV", "V4_kV"]
    assert read_csv(out / "injections.csv")[0] == ["t_ms", "u1_A", "u2_A", "u3_A", "u4_A"]
    assert read_csv(out / "line_currents.csv")[0] == ["t_ms", "I_1_2_A", "I_1_3_A", "I_2_3_A", "I_2_4_A", "I_3_4_A"]
    assert v.shape == (151, 5)
    np.testing.assert_allclose(v[0, 1:], [105.0, 104.96, 104.9, 105.07])
    assert v[-1, 0] == pytest.approx(1.5)
    report = json.loads((out / "report.json").read_text())
    assert report["controller"] == "deadband-pi"
    assert "range:" in capsys.readouterr().out


def test_simulate_zero_disturbance_constant(tmp_path):
    ov = tmp_path / "zero.scn"
    s = parse_scenario(SCN)
    from mtdcsim.integrator import SystemState
    ov.write_text(emit_overlay(np.zeros(4), SystemState.at_rest(np.full(4, 100e3))))
    for kind in ("droop", "pi", "deadband-pi"):
        out = tmp_path / kind
        code = main(["simulate", SCN, "--overlay", str(ov), "--controller", kind, "--out", str(out),
                     "--no-until-steady"])
        assert code == 0
        _, v = read_csv(out / "voltages.csv")
        assert np.all(v[:, 1:] == 100.0)
        _, u = read_csv(out / "injections.csv")
        assert np.all(u[:, 1:] == 0.0)


def test_simulate_droop_range_failure_exit_4(tmp_path):
    code = main(["simulate", SCN, "--controller", "droop", "--out", str(tmp_path),
                 "--record-stride", "100", "--max-time-s", "1"])
    assert code == 4
    report = json.loads((tmp_path / "report.json").read_text())
    assert not report["range"]["satisfied"]
    assert report["lyapunov"] is None


def test_simulate_blowup_exit_3_with_partial_csv(tmp_path, capsys):
    code = main(["simulate", SCN, "--controller", "droop", "--out", str(tmp_path),
                 "--step-us", "1e6", "--horizon-ms", "200000", "--no-until-steady"])
    assert code == 3
    _, v = read_csv(tmp_path / "voltages.csv")
    assert len(v) > 1 and np.all(np.isfinite(v))
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["failure"]["stage"] in {"k1", "k2", "k3", "k4", "update"}
    assert "FAILED" in capsys.readouterr().out


def test_equilibrium(capsys):
    assert main(["equilibrium", SCN, "--controller", "droop"]) == 0
    out = capsys.readouterr().out
    assert "94.05" in out and "relative residual" in out


def test_equilibrium_rejects_non_droop(capsys):
    assert main(["equilibrium", SCN]) == 2
    assert "unsupported controller kind" in capsys.readouterr().err


def test_verify_sharing(capsys):
    assert main(["verify-sharing", SCN, "--controller", "droop"]) == 0
    assert "dispersion nonincreasing: yes" in capsys.readouterr().out
    assert main(["verify-sharing", SCN, "--gammas", "0.1,1"]) == 2


def test_counterexample(tmp_path, capsys):
    out = tmp_path / "ce.scn"
    assert main(["counterexample", SCN, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "below V_lo" in text
    s = apply_overlay(parse_scenario(SCN), out)
    from mtdcsim.analysis import band_violation, droop_equilibrium
    V = droop_equilibrium(s.topology, 10.0, 100e3, s.I_inj)
    assert np.max(band_violation(V, 95e3, 105e3)) >= 100.0


def test_validation_error_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text(open(SCN).read().replace("v_lo = 95 kV", "v_lo = 110 kV"))
    assert main(["simulate", str(bad), "--out", str(tmp_path)]) == 2
    assert "bad.scn:" in capsys.readouterr().err
    assert main(["simulate", str(tmp_path / "nope.scn"), "--out", str(tmp_path)]) == 2
