"""Command-line entry point: ``netmech --command {generate,solve,mechanism,audit,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import bench, mechanism
from .distributions import load_priors
from .errors import ConfigError, NetmechError
from .io import atomic_write_text, csv_text
from .market import generate_ba_network, generate_costs, instance_to_dict, load_instance
from .solver import recover_primal, solution_to_dict, solve_fixed_point

log = logging.getLogger("netmech")

COMMANDS = ("generate", "solve", "mechanism", "audit", "bench")


@dataclass
class RunConfig:
    command: str
    instance_path: str | None = None
    prior_path: str | None = None
    seed: int = 0
    tol: float = 1e-9
    quad_points: int = 65
    mc_samples: int = 2000
    output_path: str | None = None
    output_format: str = "json"
    parallel: bool = False
    n_nodes: int = 100
    m: int = 2
    segments: int = 1
    n_instances: int = 5
    cost_mode: str = "linear"
    agent: int | None = None
    n_misreports: int = 20

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.output_format not in ("json", "csv"):
            raise ConfigError(f"unknown format {self.output_format!r}")
        if not self.tol > 0:
            raise ConfigError("tol must be > 0")
        if self.quad_points < 3 or self.quad_points % 2 == 0:
            raise ConfigError("quad_points must be odd and >= 3")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")
        needs_instance = self.command in ("solve", "mechanism", "audit")
        if needs_instance and not self.instance_path:
            raise ConfigError(f"{self.command} needs --instance")
        if self.command in ("mechanism", "audit") and not self.prior_path:
            raise ConfigError(f"{self.command} needs --priors")
        for p in (self.instance_path, self.prior_path):
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"file not found: {p}")


def _emit(cfg: RunConfig, payload, rows=None, columns=None) -> None:
    if cfg.output_format == "csv":
        if rows is None:
            raise ConfigError(f"{cfg.command} has no csv output")
        text = csv_text(rows, columns)
    else:
        text = json.dumps(payload, indent=1) + "\n"
    if cfg.output_path:
        atomic_write_text(cfg.output_path, text)
    else:
        sys.stdout.write(text)


def _generate(cfg: RunConfig) -> None:
    net = generate_ba_network(cfg.n_nodes, cfg.m, seed=cfg.seed)
    costs = generate_costs(net, cfg.segments, seed=cfg.seed)
    _emit(cfg, instance_to_dict(net, costs))


def _solve(cfg: RunConfig) -> None:
    net, costs = load_instance(cfg.instance_path)
    keep = cfg.output_format == "csv"
    sol = solve_fixed_point(net, costs, cfg.tol, keep_history=keep)
    alloc = recover_primal(net, costs, sol)
    rows = None
    if keep:
        # tidy price trajectories for plotting
        rows = [
            {"iteration": k, "node": i, "lambda": lam, "decrement": sol.trace[k - 1] if k else ""}
            for k, row in enumerate(sol.history)
            for i, lam in enumerate(row)
        ]
    _emit(cfg, solution_to_dict(net, sol, alloc), rows, ["iteration", "node", "lambda", "decrement"])


def _mechanism(cfg: RunConfig) -> None:
    net, costs = load_instance(cfg.instance_path)
    priors = load_priors(cfg.prior_path)
    out = mechanism.run_mechanism(net, costs, priors, mechanism.QuadConfig(points=cfg.quad_points), cfg.tol)
    rows = [
        {"agent": i, "q": out.q[i], "x": out.x[i], "rent": out.payments.integrals[i].sum()}
        for i in range(net.n)
    ]
    _emit(cfg, out.to_dict(net), rows, ["agent", "q", "x", "rent"])


def _audit(cfg: RunConfig) -> None:
    net, costs = load_instance(cfg.instance_path)
    priors = load_priors(cfg.prior_path)
    agents = range(net.n) if cfg.agent is None else [cfg.agent]
    iid = Path(cfg.instance_path).stem
    rows = []
    for i in agents:
        c_i = costs.slopes[i]
        mis = mechanism.misreport_grid(priors[i], cfg.n_misreports, cfg.seed, c_i)
        rep = mechanism.audit(net, priors, costs.q_bar, i, c_i, mis, cfg.mc_samples, cfg.seed,
                              grid_points=cfg.quad_points, tol=cfg.tol)
        rows.extend(rep.rows(iid))
    rows.extend(mechanism.rent_report(net, priors, costs.q_bar, min(cfg.mc_samples, 500), cfg.seed,
                                      mechanism.QuadConfig(points=cfg.quad_points), cfg.tol).rows(iid))
    _emit(cfg, {"rows": rows}, rows, mechanism.REPORT_COLUMNS)


def _bench(cfg: RunConfig) -> None:
    if cfg.instance_path:
        net, costs = load_instance(cfg.instance_path)
        bench._warm_up()
        records = bench.bench_instance(Path(cfg.instance_path).stem, net, costs, cfg.tol)
        summary = bench.summarize(records)
    else:
        records, summary = bench.run_benchmark(
            cfg.n_instances, cfg.n_nodes, cfg.cost_mode, cfg.seed, m=cfg.m, parallel=cfg.parallel, tol=cfg.tol
        )
    rows = bench.records_to_rows(records)
    _emit(cfg, {"records": rows, "summary": asdict(summary)}, rows, bench.BENCH_COLUMNS)
    log.info("max relative discrepancy %.3g, median speedup %.3g",
             summary.max_rel_discrepancy, summary.median_speedup)


_DISPATCH = {"generate": _generate, "solve": _solve, "mechanism": _mechanism, "audit": _audit, "bench": _bench}


def run(cfg: RunConfig) -> int:
    cfg.validate()
    _DISPATCH[cfg.command](cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netmech", description=__doc__)
    p.add_argument("--command", required=True, choices=COMMANDS)
    p.add_argument("--instance", dest="instance_path")
    p.add_argument("--priors", dest="prior_path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--quad-points", type=int, default=65)
    p.add_argument("--mc-samples", type=int, default=2000)
    p.add_argument("--out", dest="output_path")
    p.add_argument("--format", dest="output_format", choices=("json", "csv"), default="json")
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--n-nodes", type=int, default=100, help="generate/bench: nodes per instance")
    p.add_argument("--m", type=int, default=2, help="generate/bench: attachments per new node")
    p.add_argument("--segments", type=int, default=1, help="generate: cost segments per agent")
    p.add_argument("--n-instances", type=int, default=5, help="bench: instance count")
    p.add_argument("--cost-mode", choices=sorted(bench.COST_MODES), default="linear")
    p.add_argument("--agent", type=int, help="audit: single agent (default all)")
    p.add_argument("--n-misreports", type=int, default=20)
    return p


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("NETMECH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    cfg = RunConfig(**vars(args))
    try:
        return run(cfg)
    except (NetmechError, OSError, ValueError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": cfg.command}
        sys.stderr.write(json.dumps(record) + "\n")
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
