"""Command line entry point: ``mtdcsim {simulate,equilibrium,verify-sharing,counterexample}``.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 a verdict
failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import (band_violation, droop_equilibrium, droop_residual, gamma_sweep,
                       range_verdict, violating_injection)
from .controllers import ControllerKind
from .errors import MTDCError, NumericalBlowupError, ValidationError
from .integrator import IntegratorConfig, SystemState, simulate
from .report import build_report, write_csvs
from .scenario import apply_overlay, emit_overlay, parse_scenario

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_VERDICT = 4

DEFAULT_GAMMAS = (1.0, 0.1, 0.01, 0.001)


def _load(args):
    s = parse_scenario(args.scenario)
    if getattr(args, "overlay", None):
        s = apply_overlay(s, args.overlay)
    if getattr(args, "controller", None):
        s = s.with_controller(args.controller)
    return s


def _integrator(args, base: IntegratorConfig) -> IntegratorConfig:
    kw = {}
    if args.step_us is not None:
        kw["step"] = args.step_us * 1e-6
    if args.horizon_ms is not None:
        kw["horizon"] = args.horizon_ms * 1e-3
    if args.record_stride is not None:
        kw["record_stride"] = args.record_stride
    if args.until_steady is not None:
        kw["until_steady"] = args.until_steady
    if args.max_time_s is not None:
        kw["max_time"] = args.max_time_s
    if not kw:
        return base
    fields = {k: getattr(base, k) for k in base.__dataclass_fields__}
    fields.update(kw)
    if fields["until_steady"] and fields["max_time"] < fields["horizon"]:
        fields["max_time"] = fields["horizon"]
    return IntegratorConfig(**fields)


def cmd_simulate(args) -> int:
    s = _load(args)
    icfg = _integrator(args, s.integrator)
    out = Path(args.out)
    try:
        traj = simulate(s.topology, s.controller, s.I_inj, s.initial, icfg)
        failure = None
    except NumericalBlowupError as exc:
        traj = exc.trajectory
        failure = {"message": str(exc), "t": exc.t, "stage": exc.stage}
    paths = write_csvs(traj, out)
    report = build_report(traj, csv_files=paths, failure=failure)
    (out / "report.json").write_text(report.to_json())
    print(report.summary())
    print(f"wrote {', '.join(p.name for p in paths)} and report.json to {out}")
    if failure is not None:
        return EXIT_NUMERICAL
    return EXIT_VERDICT if report.verdict_failed else EXIT_OK


def cmd_equilibrium(args) -> int:
    s = _load(args)
    cfg = s.controller
    if cfg.kind is not ControllerKind.DROOP:
        print(f"equilibrium: unsupported controller kind {cfg.kind.value!r} "
              f"(closed form exists for droop only; pass --controller droop)", file=sys.stderr)
        return EXIT_VALIDATION
    V = droop_equilibrium(s.topology, cfg.K_P, cfg.V_nom, s.I_inj)
    res = droop_residual(s.topology, cfg.K_P, cfg.V_nom, s.I_inj, V)
    print("terminal  V_kV")
    for i, v in enumerate(V, start=1):
        print(f"{i:8d}  {v / 1e3:.9f}")
    print(f"relative residual: {res:.3e}")
    return EXIT_OK


def cmd_verify_sharing(args) -> int:
    s = _load(args)
    cfg = s.controller
    if cfg.kind is not ControllerKind.DROOP:
        print(f"note: sweeping the droop part of the {cfg.kind.value} controller "
              f"(valid while voltages stay inside the band)", file=sys.stderr)
    gammas = args.gammas or DEFAULT_GAMMAS
    points = gamma_sweep(s.topology, cfg.K_P, cfg.V_nom, s.I_inj, gammas)
    print(f"{'gamma':>10}  {'dispersion':>12}  {'opt_deviation':>13}")
    for p in points:
        print(f"{p.gamma:10.4g}  {p.dispersion:12.6g}  {p.optimum_deviation:13.6g}")
    if points[0].balanced:
        print("balanced disturbance: optimum is u = 0, deviation column is max|u| in A")
        return EXIT_OK
    disp = [p.dispersion for p in points]
    monotone = all(b <= a for a, b in zip(disp, disp[1:]))
    print(f"dispersion nonincreasing: {'yes' if monotone else 'no'}")
    return EXIT_OK if monotone else EXIT_VERDICT


def cmd_counterexample(args) -> int:
    s = _load(args)
    cfg = s.controller.with_kind(ControllerKind.DROOP)
    I_inj = violating_injection(s.topology, cfg.K_P, cfg.V_nom, cfg.V_lo, cfg.V_hi,
                                margin_fraction=args.margin)
    V_eq = droop_equilibrium(s.topology, cfg.K_P, cfg.V_nom, I_inj)
    viol = band_violation(V_eq, cfg.V_lo, cfg.V_hi)
    k = int(np.argmax(viol))
    band = cfg.V_hi[k] - cfg.V_lo[k]
    side = "below V_lo" if V_eq[k] < cfg.V_lo[k] else "above V_hi"
    print(f"injection (A): {', '.join(f'{x:.6g}' for x in I_inj)}")
    print(f"droop equilibrium: terminal {k + 1} at {V_eq[k] / 1e3:.6f} kV, {viol[k]:.6g} V {side}"
          + (f" ({100 * viol[k] / band:.3g}% of band width)" if band > 0 else ""))

    status = EXIT_OK
    if not args.no_simulate:
        icfg = IntegratorConfig(step=s.integrator.step, horizon=s.integrator.horizon,
                                until_steady=True, max_time=max(s.integrator.max_time, s.integrator.horizon),
                                record_stride=max(1, s.integrator.record_stride))
        traj = simulate(s.topology, cfg, I_inj, SystemState.at_rest(cfg.V_nom), icfg)
        rv = range_verdict(traj, cfg.V_lo, cfg.V_hi, tolerance=0.0)
        agree = np.max(np.abs(traj.V[-1] - V_eq)) / np.max(np.abs(V_eq))
        print(f"simulated droop final voltages (kV): {', '.join(f'{v / 1e3:.6f}' for v in traj.V[-1])}"
              f"  [converged={traj.converged}, relative gap to linear solve {agree:.2e}]")
        if rv.satisfied:
            print("simulation did not reproduce the violation", file=sys.stderr)
            status = EXIT_VERDICT

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(emit_overlay(I_inj, comment=f"droop counterexample for {args.scenario}; "
                                f"terminal {k + 1} {side} by {viol[k]:.6g} V"))
    print(f"wrote overlay {out}")
    return status


def _gammas(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse gamma list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtdcsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario file (.scn)")
        sp.add_argument("--controller", choices=[k.value for k in ControllerKind],
                        help="override the controller kind of the scenario")
        sp.add_argument("--overlay", help="overlay file replacing injection/initial sections")

    sp = sub.add_parser("simulate", help="integrate the closed loop and write CSVs + report")
    common(sp)
    sp.add_argument("--out", default="out", help="output directory (default: ./out)")
    sp.add_argument("--step-us", type=float, help="RK4 step in microseconds")
    sp.add_argument("--horizon-ms", type=float, help="densely recorded horizon in milliseconds")
    sp.add_argument("--record-stride", type=int, help="record every N-th step inside the horizon")
    sp.add_argument("--until-steady", dest="until_steady", action="store_true", default=None,
                    help="keep integrating past the horizon until steady state")
    sp.add_argument("--no-until-steady", dest="until_steady", action="store_false")
    sp.add_argument("--max-time-s", type=float, help="time limit for --until-steady, in seconds")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("equilibrium", help="closed-form droop equilibrium")
    common(sp)
    sp.set_defaults(func=cmd_equilibrium)

    sp = sub.add_parser("verify-sharing", help="droop current sharing as line resistances shrink")
    common(sp)
    sp.add_argument("--gammas", type=_gammas, help="descending comma-separated resistance scales")
    sp.set_defaults(func=cmd_verify_sharing)

    sp = sub.add_parser("counterexample", help="disturbance that drives droop voltages out of range")
    common(sp)
    sp.add_argument("--out", default="counterexample.scn", help="overlay file to write")
    sp.add_argument("--margin", type=float, default=0.01, help="required violation as a fraction of band width")
    sp.add_argument("--no-simulate", action="store_true", help="skip the confirming simulation")
    sp.set_defaults(func=cmd_counterexample)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalBlowupError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MTDCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
