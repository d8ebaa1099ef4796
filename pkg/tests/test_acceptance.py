"""The thirteen acceptance criteria, each at its stated tolerance.

Every test records a PASS/FAIL line (shown in the terminal summary) and
then asserts, so a failing criterion fails the run.
"""

import time

import mpmath as mp
import numpy as np
import pytest

from conftest import mechanism_market, random_instance, record
from netmech import mechanism as M
from netmech.bench import run_benchmark
from netmech.distributions import (
    AgentPrior,
    Laplace,
    Marginal,
    PointMass,
    PowerFunction,
    ReversedExponential,
    Uniform,
    Weibull,
    sample_types,
)
from netmech.market import CostProfile, build_network, cost_eval, generate_ba_network, generate_costs
from netmech.solver import (
    allocate,
    dual_objective,
    quantity_path,
    recover_primal,
    reference_solve,
    solve_fixed_point,
)

N_RANDOM = 50


@pytest.fixture(scope="module")
def random_set():
    # n <= 30 nodes, N <= 4 segments
    return [random_instance(1000 + k, n_max=30, seg_max=4) for k in range(N_RANDOM)]


@pytest.fixture(scope="module")
def battery():
    """Five 5-agent, 2-segment markets with one true type per agent."""
    out = []
    for seed in range(5):
        net, priors, q_bar = mechanism_market(100 + seed, n=5, n_seg=2)
        types = sample_types(priors, 200 + seed, 1)[0]
        out.append((net, priors, q_bar, types))
    return out


def _bounds(priors):
    return min(p.lows.min() for p in priors), max(p.highs.max() for p in priors)


def test_c01_golden_instance():
    warm = build_network(2, [0.2, 0.2], [(0, 1, 2.0)])
    solve_fixed_point(warm, CostProfile([[1.0], [1.5]], 5.0, 1.0, 2.0))
    net = build_network(2, [0.3, 0.3], [(0, 1, 1.0)])
    costs = CostProfile([[1.0], [2.0]], 10.0, 1.0, 2.0)
    t0 = time.perf_counter()
    sol = solve_fixed_point(net, costs)
    alloc = recover_primal(net, costs, sol)
    elapsed = time.perf_counter() - t0
    errs = [
        *np.abs(sol.lam - [1.0, 2.0]),
        *np.abs(alloc.q - [0.68889, 0.02222]),
        abs(alloc.h.max() - 1 / 3),
        abs(alloc.primal_cost - 0.73333),
        abs(alloc.dual_value - 0.73333),
    ]
    # the stated decimals are rounded to 5 places; compare exact values at 1e-6
    exact = [
        *np.abs(sol.lam - [1.0, 2.0]),
        *np.abs(alloc.q - [0.3 + 1 / 3 + 1 / 18, 0.3 - 1 / 3 + 1 / 18]),
        abs(alloc.h.max() - 1 / 3),
        abs(alloc.primal_cost - 11 / 15),
        abs(alloc.dual_value - 11 / 15),
    ]
    ok = max(exact) <= 1e-6 and max(errs) <= 1e-5 and elapsed < 0.010
    record(1, ok, f"max err {max(exact):.1e} vs exact, {max(errs):.1e} vs rounded; {elapsed * 1e3:.2f} ms")
    assert ok


def test_c02_strong_duality(random_set):
    t0 = time.perf_counter()
    gaps = []
    for net, costs in random_set:
        a = allocate(net, costs)
        gaps.append(abs(a.primal_cost - a.dual_value) / max(1.0, a.primal_cost))
    elapsed = time.perf_counter() - t0
    ok = max(gaps) <= 1e-6 and elapsed < 30
    record(2, ok, f"max relative gap {max(gaps):.2e} over {len(gaps)} instances in {elapsed:.2f} s")
    assert ok


def test_c03_cross_solver(random_set):
    worst = 0.0
    for net, costs in random_set:
        a = allocate(net, costs)
        ref = reference_solve(net, costs)
        fr = dual_objective(net, costs, ref.lam)
        worst = max(worst, abs(fr - a.dual_value) / max(1.0, abs(a.dual_value)))
    ok = worst <= 1e-5
    record(3, ok, f"max relative objective difference {worst:.2e}")
    assert ok


def test_c04_table2_shape():
    t0 = time.perf_counter()
    _, lin = run_benchmark(5, 100, "linear", seed=1)
    _, pw = run_benchmark(5, 100, "piecewise", seed=1)
    elapsed = time.perf_counter() - t0
    ok = (
        lin.all_converged
        and pw.all_converged
        and lin.max_rel_discrepancy <= 1e-3
        and pw.max_rel_discrepancy <= 1e-3
        and lin.median_speedup >= 1
        and elapsed < 300
    )
    record(
        4,
        ok,
        f"linear disc {lin.max_rel_discrepancy:.1e} speedup {lin.median_speedup:.1f}x; "
        f"piecewise disc {pw.max_rel_discrepancy:.1e} speedup {pw.median_speedup:.1f}x; {elapsed:.1f} s",
    )
    assert ok


def test_c05_monotone_iterates(random_set, battery):
    violations = 0
    sweeps = 0
    solves = list(random_set)
    for seed in range(1, 6):
        net = generate_ba_network(100, 2, seed=seed)
        solves += [(net, generate_costs(net, 1, seed=seed)), (net, generate_costs(net, 4, seed=seed))]
    for net, costs in solves:
        for backend in ("numba", "numpy"):
            sol = solve_fixed_point(net, costs, backend=backend, keep_history=True)
            violations += int(np.sum(np.diff(sol.history, axis=0) > 0))
            sweeps += sol.iterations
    # warm-started paths as used by the payment rule raise on any breach
    paths = 0
    for net, priors, q_bar, types in battery:
        lo, hi = _bounds(priors)
        virt = M.virtualize(CostProfile(types, q_bar, lo, hi), priors)
        for i in range(net.n):
            for j, m in enumerate(priors[i].marginals):
                quantity_path(net, virt.slopes, q_bar, i, j, m.virtual_cost(np.linspace(m.hi, m.lo, 33)))
                paths += 1
    ok = violations == 0
    record(5, ok, f"{violations} increases over {sweeps} sweeps ({len(solves)} instances x 2 backends) and {paths} warm paths")
    assert ok


def test_c06_independence():
    rng = np.random.default_rng(6)
    worst, probes = 0.0, 0
    while probes < 200:
        net, costs = random_instance(int(rng.integers(1e6)), n_max=20, seg_max=4)
        if costs.n_segments < 2:
            continue
        i = int(rng.integers(net.n))
        j = int(rng.integers(costs.n_segments))
        base = allocate(net, costs).q_seg[i, j]
        s = costs.slopes.copy()
        for l in range(costs.n_segments):
            if l != j:
                lo = s[i, l - 1] if l > 0 else costs.c_lo
                hi = s[i, l + 1] if l + 1 < costs.n_segments else costs.c_hi
                s[i, l] = rng.uniform(lo, hi)
        worst = max(worst, abs(allocate(net, costs.with_slopes(s)).q_seg[i, j] - base))
        probes += 1
    ok = worst <= 1e-6
    record(6, ok, f"max change of q_ij over {probes} probes {worst:.2e}")
    assert ok


def test_c07_sd_and_complementarity(random_set):
    sd, comp = 0.0, 0.0
    solves = list(random_set)
    for seed in range(1, 6):
        net = generate_ba_network(100, 2, seed=seed)
        solves += [(net, generate_costs(net, 1, seed=seed)), (net, generate_costs(net, 4, seed=seed))]
    for net, costs in solves:
        a = allocate(net, costs)
        sd = max(sd, float(np.max(np.abs(a.sd_residual))))
        comp = max(comp, float(np.max(a.complementarity)))
    ok = sd <= 1e-8 and comp <= 1e-8
    record(7, ok, f"max |SD residual| {sd:.1e}, max h*h_rev {comp:.1e} over {len(solves)} instances")
    assert ok


def test_c08_point_mass_equivalence():
    worst = 0.0
    for seed in range(20):
        net, costs = random_instance(2000 + seed, n_max=20, seg_max=4)
        priors = [AgentPrior(tuple(PointMass(c, c) for c in row)) for row in costs.slopes]
        a = M.optimal_allocation(net, costs, priors)
        b = allocate(net, costs)
        worst = max(worst, float(np.max(np.abs(a.q - b.q))), float(np.max(np.abs(a.q_seg - b.q_seg))))
    ok = worst <= 1e-9
    record(8, ok, f"max allocation difference {worst:.1e} over 20 instances")
    assert ok


def test_c09_zero_rent_at_top():
    bad = 0
    agents = 0
    for seed in range(10):
        net, priors, q_bar = mechanism_market(300 + seed, n=5, n_seg=2)
        lo, hi = _bounds(priors)
        top = CostProfile(np.array([p.highs for p in priors]), q_bar, lo, hi)
        pay = M.payment(net, top, priors)
        alloc = M.optimal_allocation(net, top, priors)
        for i in range(net.n):
            agents += 1
            exact_cost = cost_eval(top.slopes[i], q_bar, alloc.q[i])
            if np.any(pay.integrals[i] != 0.0) or pay.x[i] != exact_cost:
                bad += 1
    ok = bad == 0
    record(9, ok, f"{bad} of {agents} top-type agents with nonzero rent or x != cost")
    assert ok


def test_c10_ic_pc_battery(battery):
    t0 = time.perf_counter()
    worst_gap = np.inf
    worst_pc = np.inf
    failures = 0
    checks = 0
    for k, (net, priors, q_bar, types) in enumerate(battery):
        for i in range(5):
            mis = M.misreport_grid(priors[i], 20, k * 10 + i, types[i])
            rep = M.audit(net, priors, q_bar, i, types[i], mis, 2000, 1000 + k)
            z = rep.utility_gap / np.where(rep.gap_se > 0, rep.gap_se, np.inf)
            worst_gap = min(worst_gap, float(np.min(np.where(rep.utility_gap < 0, z, 0.0))))
            worst_pc = min(worst_pc, rep.pc_value)
            failures += int(np.sum(~rep.gap_ok)) + int(not rep.pc_ok)
            checks += rep.utility_gap.size + 1
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and elapsed < 600
    record(10, ok, f"{failures} of {checks} estimates below -3 SE (worst gap z {worst_gap:.2f}, min V {worst_pc:.3g}); {elapsed:.0f} s")
    assert ok


def test_c11_rent_estimators():
    lines = []
    ok = True
    for seed in range(3):
        net, priors, q_bar = mechanism_market(400 + seed, n=3, n_seg=2)
        rep = M.rent_report(net, priors, q_bar, 500, seed)
        agree = abs(rep.diff) <= 3 * rep.diff_se and rep.min_profile_rent >= 0
        ok &= agree
        lines.append(f"{rep.rent_direct:.4f} vs {rep.rent_formula:.4f} (diff {rep.diff:+.1e}, SE {rep.diff_se:.1e})")
    record(11, ok, "; ".join(lines))
    assert ok


def test_c12_k_ratio_closed_forms():
    rng = np.random.default_rng(12)
    worst_closed = 0.0
    for m in (Uniform(1.0, 3.0), PowerFunction(0.5, 2.0, 3.0), ReversedExponential(2.0, 4.0, 1.7)):
        y = np.linspace(0, m.width, 52)[1:-1]
        numeric = Marginal._k(m, y)
        worst_closed = max(worst_closed, float(np.max(np.abs(m._k(y) - numeric) / np.maximum(1.0, numeric))))
    mp.mp.dps = 30
    worst_quad = 0.0
    for m in (Weibull(1.0, 2.5, 2.3), Laplace(0.5, 2.0, 1.8)):
        w, lam = mp.mpf(m.width), mp.mpf(m.lam)
        if isinstance(m, Weibull):
            dens = lambda t: (t / w) ** (lam - 1) * mp.e ** (-((t / w) ** lam))
        else:
            dens = lambda t: mp.e ** (-lam * abs(t - w / 2))
        for x in np.linspace(m.lo, m.hi, 51)[1:]:
            y = mp.mpf(x - m.lo)
            pts = [0, w / 2, y] if isinstance(m, Laplace) and y > w / 2 else [0, y]
            oracle = float(mp.quad(dens, pts) / dens(y))
            worst_quad = max(worst_quad, abs(m.k_ratio(x) - oracle) / max(1.0, oracle))
    ok = worst_closed <= 1e-8 and worst_quad <= 1e-6
    record(12, ok, f"closed forms vs F/f {worst_closed:.1e}; Weibull/Laplace vs quadrature {worst_quad:.1e}")
    assert ok


def test_c13_quadrature_stability(battery):
    worst = 0.0
    for net, priors, q_bar, types in battery:
        lo, hi = _bounds(priors)
        costs = CostProfile(types, q_bar, lo, hi)
        coarse = M.payment(net, costs, priors, M.QuadConfig(points=65)).x
        fine = M.payment(net, costs, priors, M.QuadConfig(points=129)).x
        scale = np.where(np.abs(fine) > 0, np.abs(fine), 1.0)
        worst = max(worst, float(np.max(np.abs(fine - coarse) / scale)))
    ok = worst < 1e-4
    record(13, ok, f"max relative payment change 65 -> 129 nodes {worst:.1e}")
    assert ok
