"""Paired benchmark: fixed-point solver against the reference ascent."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParamError
from .market import CostProfile, Network, generate_ba_network, generate_costs
from .solver import dual_objective, recover_primal, reference_solve, solve_fixed_point

log = logging.getLogger(__name__)

BENCH_COLUMNS = ["instance_id", "solver", "cost", "wall_time", "iterations", "converged"]
COST_MODES = {"linear": 1, "piecewise": 4}


@dataclass
class BenchRecord:
    instance_id: str
    solver: str
    cost: float
    wall_time: float
    iterations: int
    converged: bool


@dataclass
class BenchSummary:
    n_instances: int
    max_rel_discrepancy: float
    median_speedup: float
    all_converged: bool
    timing_reliable: bool


def _warm_up() -> None:
    # first numba call compiles; keep that out of the timings
    net = generate_ba_network(3, 1, seed=0)
    solve_fixed_point(net, generate_costs(net, 2, seed=0))


def bench_instance(instance_id: str, net: Network, costs: CostProfile, tol: float = 1e-9) -> list[BenchRecord]:
    """Solve one instance with both solvers.

    The fixed-point cost is the primal cost of the recovered allocation;
    the reference cost is the dual objective at its best iterate. Strong
    duality makes the two comparable.
    """
    t0 = time.perf_counter()
    sol = solve_fixed_point(net, costs, tol)
    alloc = recover_primal(net, costs, sol)
    t_fp = time.perf_counter() - t0
    t0 = time.perf_counter()
    ref = reference_solve(net, costs)
    ref_cost = dual_objective(net, costs, ref.lam)
    t_ref = time.perf_counter() - t0
    return [
        BenchRecord(instance_id, "fixed_point", alloc.primal_cost, t_fp, sol.iterations, sol.converged),
        BenchRecord(instance_id, "reference", ref_cost, t_ref, ref.iterations, ref.converged),
    ]


def summarize(records: list[BenchRecord], timing_reliable: bool = True) -> BenchSummary:
    by_id: dict[str, dict[str, BenchRecord]] = {}
    for r in records:
        by_id.setdefault(r.instance_id, {})[r.solver] = r
    disc, speed = [], []
    for pair in by_id.values():
        fp, ref = pair["fixed_point"], pair["reference"]
        disc.append(abs(fp.cost - ref.cost) / max(1.0, abs(fp.cost)))
        speed.append(ref.wall_time / max(fp.wall_time, 1e-12))
    return BenchSummary(
        n_instances=len(by_id),
        max_rel_discrepancy=float(max(disc)) if disc else float("nan"),
        median_speedup=float(np.median(speed)) if speed else float("nan"),
        all_converged=all(r.converged for r in records),
        timing_reliable=timing_reliable,
    )


def run_benchmark(
    n_instances: int = 5,
    n_nodes: int = 100,
    cost_mode: str = "linear",
    seed: int = 0,
    *,
    m: int = 2,
    parallel: bool = False,
    tol: float = 1e-9,
) -> tuple[list[BenchRecord], BenchSummary]:
    """Generate Barabasi-Albert instances and run both solvers on each.

    ``cost_mode`` is ``linear`` (one segment) or ``piecewise`` (four).
    Instance ``k`` uses seed ``seed + k`` for both graph and costs, so cost
    columns are reproducible. With ``parallel`` the instances run on a
    thread pool and the timings are flagged unreliable.
    """
    if n_instances < 1 or n_nodes < 2:
        raise ParamError("need n_instances >= 1 and n_nodes >= 2")
    if cost_mode not in COST_MODES:
        raise ParamError(f"cost_mode must be one of {sorted(COST_MODES)}")
    _warm_up()

    def one(k: int) -> list[BenchRecord]:
        net = generate_ba_network(n_nodes, min(m, n_nodes - 1), seed=seed + k)
        costs = generate_costs(net, COST_MODES[cost_mode], seed=seed + k)
        return bench_instance(f"{cost_mode}-{k}", net, costs, tol)

    if parallel:
        with ThreadPoolExecutor() as pool:
            chunks = list(pool.map(one, range(n_instances)))
    else:
        chunks = [one(k) for k in range(n_instances)]
    records = [r for chunk in chunks for r in chunk]
    summary = summarize(records, timing_reliable=not parallel)
    log.info("benchmark summary: %s", summary)
    return records, summary


def records_to_rows(records: list[BenchRecord]) -> list[dict]:
    return [asdict(r) for r in records]
