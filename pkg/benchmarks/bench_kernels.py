"""Time the RK4 kernels (compiled and pure Python) on the bundled scenario.

    python3 benchmarks/bench_kernels.py --steps 20000 --repeat 3
"""

import argparse
import time

from mtdcsim.integrator import BACKEND, KERNELS, IntegratorConfig, simulate
from mtdcsim.scenario import bundled_scenario_path, parse_scenario


def time_backend(s, backend, steps, repeat):
    icfg = IntegratorConfig(step=1e-6, horizon=steps * 1e-6, stop_at_steady=False, record_stride=steps)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        simulate(s.topology, s.controller, s.I_inj, s.initial, icfg, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best / steps


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--controller", default=None, help="override controller kind")
    args = p.parse_args(argv)

    s = parse_scenario(bundled_scenario_path())
    if args.controller:
        s = s.with_controller(args.controller)
    print(f"default backend: {BACKEND}; {args.steps} steps, best of {args.repeat}")
    results = {b: time_backend(s, b, args.steps, args.repeat) for b in sorted(KERNELS)}
    for b, per_step in results.items():
        print(f"{b:>8}: {per_step * 1e9:10.1f} ns/step")
    if "cython" in results:
        print(f" speedup: {results['python'] / results['cython']:.0f}x")


if __name__ == "__main__":
    main()
