"""Time the numba and numpy fixed-point backends on the same instances.

Usage::

    python benchmarks/bench_kernels.py [--sizes 100 1000 5000] [--segments 4] [--repeat 3]

Both backends must land on the same multipliers; the script reports the
largest price difference alongside the timings.
"""

import argparse
import time

import numpy as np

from netmech.market import generate_ba_network, generate_costs
from netmech.solver import solve_fixed_point


def best_time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 1000, 5000])
    ap.add_argument("--segments", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    # compile once outside the timed region
    net = generate_ba_network(5, 2, seed=0)
    solve_fixed_point(net, generate_costs(net, args.segments, seed=0), backend="numba")

    print(f"{'nodes':>6} {'sweeps':>7} {'numba [s]':>10} {'numpy [s]':>10} {'ratio':>7} {'max |dlam|':>11}")
    for n in args.sizes:
        net = generate_ba_network(n, 2, seed=args.seed)
        costs = generate_costs(net, args.segments, seed=args.seed)
        t_nb, a = best_time(lambda: solve_fixed_point(net, costs, backend="numba"), args.repeat)
        t_np, b = best_time(lambda: solve_fixed_point(net, costs, backend="numpy"), args.repeat)
        diff = float(np.max(np.abs(a.lam - b.lam)))
        print(f"{n:>6} {a.iterations:>7} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>7.1f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
