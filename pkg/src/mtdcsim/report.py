"""Run reports and CSV export of trajectories."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import lyapunov_monotonicity, optimal_sharing, range_verdict
from .controllers import ControllerKind
from .integrator import Trajectory

CSV_NAMES = ("voltages.csv", "injections.csv", "line_currents.csv")


def _fmt(x: float) -> str:
    return repr(float(x))


def csv_headers(trajectory: Trajectory) -> dict[str, list[str]]:
    n = trajectory.topology.n_terminals
    return {
        "voltages.csv": ["t_ms"] + [f"V{i + 1}_kV" for i in range(n)],
        "injections.csv": ["t_ms"] + [f"u{i + 1}_A" for i in range(n)],
        "line_currents.csv": ["t_ms"] + [f"I_{lbl}_A" for lbl in trajectory.topology.line_labels()],
    }


def write_csvs(trajectory: Trajectory, out_dir) -> list[Path]:
    """Write voltages (kV), controlled currents (A) and line currents (A)
    against time in ms."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_ms = trajectory.t * 1e3
    data = {
        "voltages.csv": trajectory.V / 1e3,
        "injections.csv": trajectory.u,
        "line_currents.csv": trajectory.line_currents,
    }
    paths = []
    for name, header in csv_headers(trajectory).items():
        path = out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, row in zip(t_ms, data[name]):
                w.writerow([_fmt(t)] + [_fmt(x) for x in row])
        paths.append(path)
    return paths


@dataclass
class RunReport:
    """Verdicts of one simulation; ``None`` marks a verdict that does not
    apply to the controller kind (the reason is in ``notes``)."""

    controller: str
    backend: str
    converged: bool
    t_final: float
    steps: int
    range: dict | None
    sharing: dict | None
    lyapunov: dict | None
    csv_files: list[str] = field(default_factory=list)
    failure: dict | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def verdict_failed(self) -> bool:
        """True when a guarantee-type verdict (range or Lyapunov) failed."""
        for v in (self.range, self.lyapunov):
            if v is not None and not v["satisfied"]:
                return True
        return False

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary(self) -> str:
        lines = [f"controller: {self.controller}  backend: {self.backend}",
                 f"steps: {self.steps}  t_final: {self.t_final * 1e3:.6g} ms  converged: {self.converged}"]
        if self.failure:
            lines.append(f"FAILED: {self.failure['message']}")
        if self.range is not None:
            vf = ", ".join(f"{v / 1e3:.4f}" for v in self.range["V_final"])
            lines.append(f"range:    {'PASS' if self.range['satisfied'] else 'FAIL'}  V_final = [{vf}] kV")
        if self.sharing is not None:
            lines.append(f"sharing:  {'PASS' if self.sharing['satisfied'] else 'FAIL'}  "
                         f"max relative deviation = {self.sharing['max_relative_residual']:.3g}")
        if self.lyapunov is not None:
            lines.append(f"lyapunov: {'PASS' if self.lyapunov['satisfied'] else 'FAIL'}  "
                         f"max increase = {self.lyapunov['max_increase']:.3g} "
                         f"(tol {self.lyapunov['tolerance']:.3g})")
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def build_report(trajectory: Trajectory, range_tol: float = 1.0, sharing_tol: float = 0.01,
                 csv_files=(), failure: dict | None = None) -> RunReport:
    cfg = trajectory.controller
    notes = []
    if failure is not None or len(trajectory) == 0:
        rv = None
        notes.append("range verdict skipped: run failed")
    else:
        r = range_verdict(trajectory, cfg.V_lo, cfg.V_hi, range_tol)
        rv = {"satisfied": r.satisfied, "tolerance": r.tolerance, "V_final": r.V_final.tolist(),
              "lower_margin": r.lower_margin.tolist(), "upper_margin": r.upper_margin.tolist()}
        if not trajectory.converged:
            notes.append("range verdict uses the last sample of an unconverged run")

    sv = None
    if failure is None and len(trajectory):
        s = optimal_sharing(1.0 / cfg.K_P, trajectory.I_inj, trajectory.u[-1], sharing_tol)
        sv = {"satisfied": s.satisfied, "tolerance": s.tolerance, "mu": s.mu,
              "u_optimal": s.u_optimal.tolist(), "u_achieved": s.u_achieved.tolist(),
              "max_relative_residual": s.max_relative_residual, "cost_inverse": "K_P"}

    lv = None
    if cfg.kind is ControllerKind.DROOP:
        notes.append("lyapunov verdict not applicable to droop control")
    elif not cfg.uniform_bounds:
        notes.append("lyapunov verdict not applicable: voltage bounds are not uniform")
    elif len(trajectory) > 0:
        m = lyapunov_monotonicity(trajectory)
        lv = {"satisfied": m.nonincreasing, "max_increase": m.max_increase,
              "tolerance": m.tolerance, "W0": m.W0, "W_final": m.W_final}

    return RunReport(cfg.kind.value, trajectory.backend, trajectory.converged,
                     float(trajectory.t[-1]) if len(trajectory) else 0.0, trajectory.steps,
                     rv, sv, lv, [str(p) for p in csv_files], failure, notes)
