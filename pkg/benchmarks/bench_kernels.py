"""Compare the numba and numpy simulation backends.

    python3 benchmarks/bench_kernels.py [--paths 200] [--t-end 100]

Each backend runs the same coupled simulation; the numba timing excludes
compilation (one warm-up call first). The block extrema of both runs are
compared to show that the backends agree.
"""
import argparse
import time

import numpy as np

from fadingsde import DriftFunction, ParametricSchedule, SimulationGrid, simulate


def run(backend, drift, sched, grid, paths, workers):
    t = time.perf_counter()
    ens = simulate(drift, sched, grid, paths, seed=1, mode="coupled", workers=workers, backend=backend)
    return time.perf_counter() - t, ens


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=200)
    ap.add_argument("--t-end", type=float, default=100.0)
    ap.add_argument("--dt", type=float, default=1e-2)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    grid = SimulationGrid(args.t_end, args.dt)
    cases = [
        ("linear / log", DriftFunction("linear"), ParametricSchedule("log", L=1.0)),
        ("cubic / constant", DriftFunction("odd_power", n=3), ParametricSchedule("constant", c=1.0)),
        ("oscillating / exp", DriftFunction("oscillating", a=1.2), ParametricSchedule("exp_decay")),
    ]
    # warm-up compiles the numba kernel
    simulate(cases[0][1], cases[0][2], SimulationGrid(1.0, 0.1), 1, seed=0, backend="numba")

    steps = grid.n_steps * args.paths
    print(f"{args.paths} paths x {grid.n_steps} steps ({steps:.2e} path-steps), workers={args.workers}")
    print(f"{'case':<20}{'numba s':>10}{'numpy s':>10}{'speedup':>10}{'max |diff|':>14}")
    for name, drift, sched in cases:
        tn, en = run("numba", drift, sched, grid, args.paths, args.workers)
        tp, ep = run("numpy", drift, sched, grid, args.paths, args.workers)
        diff = float(np.max(np.abs(en.block_max - ep.block_max)))
        print(f"{name:<20}{tn:>10.3f}{tp:>10.3f}{tp / tn:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
