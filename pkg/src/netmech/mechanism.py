"""Optimal procurement mechanism: virtual-cost allocation, payments and audits.

Bids are replaced by virtual costs ``c + K(c)`` before allocating, and
each agent is paid its bid cost plus, per segment, the integral of its
own segment quantity as that segment's bid rises to the top of its
support. Truthful agents then earn a nonnegative expected profit, the
top type earns none, and no misreport pays better in expectation; the
Monte-Carlo audits here check those claims on concrete instances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from . import kernels
from .distributions import AgentPrior, _require_discernable, prior_bounds, sample_types
from .errors import NotConverged, QuadratureBudgetExceeded, ValidationError
from .market import CostProfile, Network, cost_eval, validate_instance
from .solver import (
    DEFAULT_TOL,
    Allocation,
    DualSolution,
    _arrays,
    quantity_path,
    recover_primal,
    solution_to_dict,
    snap_production,
    solve_fixed_point,
    supply_all,
)

log = logging.getLogger(__name__)

__all__ = [
    "QuadConfig",
    "PaymentResult",
    "MechanismOutcome",
    "AuditReport",
    "RentReport",
    "virtualize",
    "optimal_allocation",
    "payment",
    "run_mechanism",
    "estimate_Q",
    "misreport_grid",
    "audit",
    "rent_report",
    "REPORT_COLUMNS",
]

REPORT_COLUMNS = ["instance_id", "agent", "segment", "metric", "estimate", "std_err", "verdict"]

# slack when checking that the payment integrand never increases in the bid
_MONOTONE_SLACK = 1e-7


@dataclass(frozen=True)
class QuadConfig:
    """Composite trapezoid settings for the payment integrals.

    With ``refine`` set, the node count is doubled (``2p - 1``) until two
    consecutive estimates of a payment agree to ``refine_rtol``.
    """

    points: int = 65
    refine: bool = False
    refine_rtol: float = 1e-4
    max_points: int = 1025

    def __post_init__(self):
        if self.points < 3 or self.points % 2 == 0:
            raise ValidationError(f"quadrature needs an odd node count >= 3, got {self.points}")


def _check_types(costs: CostProfile, priors: Sequence[AgentPrior]) -> None:
    _require_discernable(priors)
    if len(priors) != costs.n or priors[0].n_segments != costs.n_segments:
        raise ValidationError(
            f"priors are {len(priors)}x{priors[0].n_segments}, costs are {costs.n}x{costs.n_segments}"
        )


def virtualize(costs: CostProfile, priors: Sequence[AgentPrior]) -> CostProfile:
    """Replace every bid slope by its virtual cost.

    Upper bound widens by the largest support gap so the result is a
    valid profile; discernability keeps each row nondecreasing.
    """
    _check_types(costs, priors)
    slopes = np.array([p.virtualize(row) for p, row in zip(priors, costs.slopes)])
    _, _, dmax = prior_bounds(priors)
    return costs.with_slopes(slopes, c_hi=costs.c_hi + dmax)


def optimal_allocation(
    net: Network, costs: CostProfile, priors: Sequence[AgentPrior], tol: float = DEFAULT_TOL
) -> Allocation:
    """Allocation that minimizes total virtual cost.

    Segment quantities keep the bids' segmentation; only the prices the
    solver sees differ. ``primal_cost`` and ``dual_value`` are in virtual
    money.
    """
    virt = virtualize(costs, priors)
    return recover_primal(net, virt, solve_fixed_point(net, virt, tol))


@dataclass
class PaymentResult:
    """Per-agent payments and their pieces.

    ``integrals[i, j]`` is the rent paid on segment ``j``; ``refine_change``
    the largest relative change seen when refining (``nan`` if unused).
    """

    x: np.ndarray
    bid_cost: np.ndarray
    integrals: np.ndarray
    q_seg: np.ndarray
    points: np.ndarray
    refine_change: float = float("nan")
    monotone_violation: float = 0.0


def _segment_integral(net, vslopes, q_bar, prior, i, j, c_ij, points, tol):
    m = prior.marginals[j]
    if c_ij >= m.hi:
        return 0.0, 0.0
    t = np.linspace(c_ij, m.hi, points)
    q = quantity_path(net, vslopes, q_bar, i, j, m.virtual_cost(t)[::-1], tol)[::-1]
    viol = float(max(0.0, np.max(np.diff(q), initial=0.0)))
    return float(trapezoid(q, t)), viol


def payment(
    net: Network,
    costs: CostProfile,
    priors: Sequence[AgentPrior],
    quad: QuadConfig | None = None,
    tol: float = DEFAULT_TOL,
    *,
    alloc: Allocation | None = None,
) -> PaymentResult:
    """Payments of the optimal mechanism at bid profile ``costs``.

    ``x_i = cost_i(q_i) + sum_j int_{c_ij}^{hi_j} q_ij(t, c_-i) dt``. Each
    integrand value re-solves the allocation with agent ``i``'s ``j``-th
    virtual slope set to ``t + K(t)``; nodes are visited from the top of
    the support down so each solve warm-starts from the previous one. A
    bid at the top of its support contributes exactly zero.

    Raises
    ------
    QuadratureBudgetExceeded
        If refinement is on and ``max_points`` nodes do not reach
        ``refine_rtol``.
    """
    quad = quad or QuadConfig()
    virt = virtualize(costs, priors)
    validate_instance(net, virt)
    if alloc is None:
        alloc = recover_primal(net, virt, solve_fixed_point(net, virt, tol))
    n, n_seg = costs.slopes.shape
    integrals = np.zeros((n, n_seg))
    used = np.full((n, n_seg), quad.points)
    worst_change = float("nan") if not quad.refine else 0.0
    viol = 0.0
    bid_cost = np.array([cost_eval(costs.slopes[i], costs.q_bar, alloc.q[i]) for i in range(n)])
    for i in range(n):
        for j in range(n_seg):
            c_ij = float(costs.slopes[i, j])
            val, v = _segment_integral(net, virt.slopes, costs.q_bar, priors[i], i, j, c_ij, quad.points, tol)
            viol = max(viol, v)
            if quad.refine and val != 0.0:
                p = quad.points
                while True:
                    p2 = 2 * p - 1
                    if p2 > quad.max_points:
                        raise QuadratureBudgetExceeded(
                            f"agent {i} segment {j}: no agreement to {quad.refine_rtol} within {quad.max_points} nodes"
                        )
                    fine, v = _segment_integral(net, virt.slopes, costs.q_bar, priors[i], i, j, c_ij, p2, tol)
                    viol = max(viol, v)
                    change = abs(fine - val) / max(abs(bid_cost[i] + fine), 1e-300)
                    val, p = fine, p2
                    if change <= quad.refine_rtol:
                        worst_change = max(worst_change, change)
                        break
                used[i, j] = p
            integrals[i, j] = val
    if viol > _MONOTONE_SLACK:
        log.warning("payment integrand increased by %.3g along a grid", viol)
    return PaymentResult(
        x=bid_cost + integrals.sum(axis=1),
        bid_cost=bid_cost,
        integrals=integrals,
        q_seg=alloc.q_seg,
        points=used,
        refine_change=worst_change,
        monotone_violation=viol,
    )


@dataclass
class MechanismOutcome:
    """Allocation at virtual costs together with the payments."""

    q: np.ndarray
    q_seg: np.ndarray
    h: np.ndarray
    x: np.ndarray
    virtual_profile: CostProfile
    allocation: Allocation = field(repr=False)
    solution: DualSolution = field(repr=False)
    payments: PaymentResult = field(repr=False)

    def to_dict(self, net: Network) -> dict:
        out = solution_to_dict(net, self.solution, self.allocation)
        out["x"] = self.x.tolist()
        out["rent"] = self.payments.integrals.sum(axis=1).tolist()
        vp = self.virtual_profile
        out["virtual_profile"] = {
            "slopes": vp.slopes.tolist(),
            "q_bar": vp.q_bar,
            "c_lo": vp.c_lo,
            "c_hi": vp.c_hi,
        }
        return out


def run_mechanism(
    net: Network,
    costs: CostProfile,
    priors: Sequence[AgentPrior],
    quad: QuadConfig | None = None,
    tol: float = DEFAULT_TOL,
) -> MechanismOutcome:
    virt = virtualize(costs, priors)
    sol = solve_fixed_point(net, virt, tol)
    alloc = recover_primal(net, virt, sol)
    pay = payment(net, costs, priors, quad, tol, alloc=alloc)
    return MechanismOutcome(
        q=alloc.q,
        q_seg=alloc.q_seg,
        h=alloc.h,
        x=pay.x,
        virtual_profile=virt,
        allocation=alloc,
        solution=sol,
        payments=pay,
    )


class _Sampler:
    """Monte-Carlo profiles of virtual slopes for a fixed market."""

    def __init__(self, net: Network, priors: Sequence[AgentPrior], q_bar: float, tol: float):
        _require_discernable(priors)
        if len(priors) != net.n:
            raise ValidationError(f"{len(priors)} priors for {net.n} nodes")
        self.net, self.priors, self.q_bar, self.tol = net, list(priors), float(q_bar), tol
        lo, hi, dmax = prior_bounds(priors)
        self.template = CostProfile(
            np.array([p.lows for p in priors]), q_bar, lo, hi + dmax
        )
        validate_instance(net, self.template)
        self.kern = kernels.active()
        self.arrays = _arrays(net)

    def check_type(self, i: int, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        p = self.priors[i]
        if c.shape != (p.n_segments,):
            raise ValidationError(f"agent {i} type must have {p.n_segments} slopes")
        for j, m in enumerate(p.marginals):
            m.k_ratio(c[j])  # raises OutOfSupport
        return c

    def virtual(self, types: np.ndarray) -> np.ndarray:
        out = np.empty_like(types)
        for i, p in enumerate(self.priors):
            out[:, i, :] = p.virtualize(types[:, i, :])
        return out

    def production(self, vslopes: np.ndarray) -> np.ndarray:
        lam = vslopes[:, -1].copy()
        buf = np.empty(0)
        _, ok, _ = self.kern.solve(lam, *self.arrays, vslopes, self.q_bar, self.tol, 100_000, buf)
        if not ok:
            raise NotConverged("Monte-Carlo solve did not converge")
        return supply_all(self.net, lam)

    def path(self, vslopes, i, j, t_desc) -> np.ndarray:
        vals = self.priors[i].marginals[j].virtual_cost(t_desc)
        return quantity_path(self.net, vslopes, self.q_bar, i, j, np.atleast_1d(vals), self.tol)


def _seg(q: np.ndarray, q_bar: float, n_seg: int) -> np.ndarray:
    q = snap_production(q, q_bar, n_seg)
    return np.clip(q[..., None] - q_bar * np.arange(n_seg), 0.0, q_bar)


def _mean_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def estimate_Q(
    net: Network,
    priors: Sequence[AgentPrior],
    q_bar: float,
    i: int,
    c_i,
    n_samples: int = 2000,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    """Expected segment quantities of agent ``i`` bidding ``c_i``.

    Averages over the other agents' types drawn from their priors.
    Returns ``(mean, std_err)``, each of length ``N``. Sample streams
    depend only on ``(seed, sample index)``, so two bids estimated with
    the same seed see the same competitors.
    """
    smp = _Sampler(net, priors, q_bar, tol)
    c_i = smp.check_type(i, c_i)
    types = sample_types(priors, seed, n_samples)
    types[:, i, :] = c_i
    virt = smp.virtual(types)
    n_seg = c_i.size
    qs = np.empty((n_samples, n_seg))
    for s in range(n_samples):
        qs[s] = _seg(smp.production(virt[s])[i], q_bar, n_seg)
    return _mean_se(qs)


def misreport_grid(prior: AgentPrior, n: int, seed: int = 0, true_type=None) -> np.ndarray:
    """``n`` alternative bids inside the supports.

    Covers the support corners (all bottoms, all tops), single-segment
    deviations from ``true_type`` when given, and random draws for the
    rest.
    """
    lows, highs = prior.lows, prior.highs
    cands = [lows, highs]
    if true_type is not None:
        t = np.asarray(true_type, dtype=np.float64)
        for j in range(prior.n_segments):
            for end in (lows[j], highs[j]):
                c = t.copy()
                c[j] = end
                cands.append(c)
    rng = np.random.default_rng(seed)
    out: list[np.ndarray] = []
    for c in cands:
        if not any(np.array_equal(c, o) for o in out):
            out.append(c)
    while len(out) < n:
        out.append(np.array([m.sample(rng) for m in prior.marginals]))
    return np.array(out[:n])


@dataclass
class AuditReport:
    """Monte-Carlo incentive and participation check for one agent.

    ``utility_gap[k]`` estimates expected truthful profit minus expected
    profit when bidding ``misreports[k]``; ``pc_value`` estimates the
    expected truthful profit (per segment in ``pc_segments``). A value
    fails only when it is below ``-3`` standard errors.
    """

    agent: int
    true_type: np.ndarray
    misreports: np.ndarray
    utility_gap: np.ndarray
    gap_se: np.ndarray
    pc_value: float
    pc_se: float
    pc_segments: np.ndarray
    pc_segments_se: np.ndarray
    samples: int
    max_monotone_violation: float = 0.0

    @property
    def gap_ok(self) -> np.ndarray:
        return self.utility_gap >= -3 * self.gap_se

    @property
    def pc_ok(self) -> bool:
        return bool(self.pc_value >= -3 * self.pc_se)

    @property
    def passed(self) -> bool:
        return bool(self.gap_ok.all() and self.pc_ok)

    def rows(self, instance_id="0") -> list[dict]:
        def verdict(ok):
            return "PASS" if ok else "FAIL"

        base = {"instance_id": instance_id, "agent": self.agent}
        rows = []
        for k, (g, se) in enumerate(zip(self.utility_gap, self.gap_se)):
            rows.append({**base, "segment": "", "metric": f"ic_gap_{k}", "estimate": g, "std_err": se,
                         "verdict": verdict(g >= -3 * se)})
        for j, (v, se) in enumerate(zip(self.pc_segments, self.pc_segments_se)):
            rows.append({**base, "segment": j, "metric": "pc_value", "estimate": v, "std_err": se,
                         "verdict": verdict(v >= -3 * se)})
        rows.append({**base, "segment": "", "metric": "pc_value", "estimate": self.pc_value,
                     "std_err": self.pc_se, "verdict": verdict(self.pc_ok)})
        return rows


def audit(
    net: Network,
    priors: Sequence[AgentPrior],
    q_bar: float,
    i: int,
    c_i,
    misreports,
    n_samples: int = 2000,
    seed: int = 0,
    *,
    grid_points: int = 65,
    tol: float = DEFAULT_TOL,
) -> AuditReport:
    """Estimate IC gaps and the participation value for agent ``i``.

    For every competitor sample and segment ``j``, the curve
    ``t -> q_ij(t, C_-i)`` is traced once on a grid that contains the
    support nodes, the true slope and every misreported slope. Under the
    payment rule, profit from bidding ``b`` at type ``c`` is
    ``sum_j q_ij(b_j) (b_j - c_j) + int_{b_j}^{hi_j} q_ij``; all bids are
    scored on the same curves (common random numbers), so the truthful
    bid's gap is exactly zero.
    """
    smp = _Sampler(net, priors, q_bar, tol)
    c_i = smp.check_type(i, c_i)
    mis = np.atleast_2d(np.asarray(misreports, dtype=np.float64))
    for b in mis:
        smp.check_type(i, b)
    prior = priors[i]
    n_seg = c_i.size
    types = sample_types(priors, seed, n_samples)
    types[:, i, :] = c_i
    virt = smp.virtual(types)

    grids = []
    for j, m in enumerate(prior.marginals):
        pts = np.concatenate([np.linspace(m.lo, m.hi, grid_points), [c_i[j]], mis[:, j]])
        g = np.unique(pts)
        grids.append(g[g >= min(c_i[j], mis[:, j].min())])
    true_idx = [int(np.searchsorted(g, c_i[j])) for j, g in enumerate(grids)]
    mis_idx = [np.searchsorted(g, mis[:, j]) for j, g in enumerate(grids)]

    gaps = np.zeros((n_samples, mis.shape[0]))
    vseg = np.zeros((n_samples, n_seg))
    viol = 0.0
    for s in range(n_samples):
        for j, g in enumerate(grids):
            q = smp.path(virt[s], i, j, g[::-1])[::-1]
            viol = max(viol, float(np.max(np.diff(q), initial=0.0)))
            # tail[k] = integral of q from g[k] to the support top
            cum = cumulative_trapezoid(q, g, initial=0.0)
            tail = cum[-1] - cum
            vseg[s, j] = tail[true_idx[j]]
            k = mis_idx[j]
            gaps[s] += tail[true_idx[j]] - tail[k] - q[k] * (mis[:, j] - c_i[j])
    if viol > _MONOTONE_SLACK:
        log.warning("agent %d: integrand increased by %.3g on an audit grid", i, viol)
    gap, gap_se = _mean_se(gaps)
    vs, vs_se = _mean_se(vseg)
    v, v_se = _mean_se(vseg.sum(axis=1))
    return AuditReport(
        agent=i,
        true_type=c_i,
        misreports=mis,
        utility_gap=gap,
        gap_se=gap_se,
        pc_value=float(v),
        pc_se=float(v_se),
        pc_segments=vs,
        pc_segments_se=vs_se,
        samples=n_samples,
        max_monotone_violation=viol,
    )


@dataclass
class RentReport:
    """Principal-side summary over sampled type profiles.

    Information rent is estimated as payments minus production cost and,
    independently, as the sum of ``q_ij * K_ij(c_ij)``; both have the same
    expectation. ``diff`` is their paired per-profile difference.
    """

    n_profiles: int
    payment: float
    payment_se: float
    cost: float
    cost_se: float
    rent_direct: float
    rent_direct_se: float
    rent_formula: float
    rent_formula_se: float
    diff: float
    diff_se: float
    min_profile_rent: float

    @property
    def agree(self) -> bool:
        return bool(abs(self.diff) <= 3 * self.diff_se) or self.diff == 0.0

    def rows(self, instance_id="0") -> list[dict]:
        base = {"instance_id": instance_id, "agent": "", "segment": ""}
        out = [
            {**base, "metric": "expected_payment", "estimate": self.payment, "std_err": self.payment_se, "verdict": ""},
            {**base, "metric": "expected_cost", "estimate": self.cost, "std_err": self.cost_se, "verdict": ""},
            {**base, "metric": "rent_payment_minus_cost", "estimate": self.rent_direct,
             "std_err": self.rent_direct_se, "verdict": "PASS" if self.min_profile_rent >= 0 else "FAIL"},
            {**base, "metric": "rent_q_times_k", "estimate": self.rent_formula,
             "std_err": self.rent_formula_se, "verdict": ""},
            {**base, "metric": "rent_estimator_difference", "estimate": self.diff, "std_err": self.diff_se,
             "verdict": "PASS" if self.agree else "FAIL"},
        ]
        return out


def rent_report(
    net: Network,
    priors: Sequence[AgentPrior],
    q_bar: float,
    n_profiles: int = 500,
    seed: int = 0,
    quad: QuadConfig | None = None,
    tol: float = DEFAULT_TOL,
) -> RentReport:
    """Expected payment, full-information cost and rent over sampled profiles."""
    _Sampler(net, priors, q_bar, tol)
    types = sample_types(priors, seed, n_profiles)
    lo, hi, _ = prior_bounds(priors)
    pay = np.empty(n_profiles)
    cost = np.empty(n_profiles)
    formula = np.empty(n_profiles)
    for s in range(n_profiles):
        costs = CostProfile(types[s], q_bar, lo, hi)
        res = payment(net, costs, priors, quad, tol)
        k = np.array([p.k_ratios(row) for p, row in zip(priors, types[s])])
        pay[s] = res.x.sum()
        cost[s] = res.bid_cost.sum()
        formula[s] = float(np.sum(res.q_seg * k))
    direct = pay - cost
    stats = {name: _mean_se(v) for name, v in
             [("pay", pay), ("cost", cost), ("direct", direct), ("formula", formula), ("diff", direct - formula)]}
    return RentReport(
        n_profiles=n_profiles,
        payment=float(stats["pay"][0]),
        payment_se=float(stats["pay"][1]),
        cost=float(stats["cost"][0]),
        cost_se=float(stats["cost"][1]),
        rent_direct=float(stats["direct"][0]),
        rent_direct_se=float(stats["direct"][1]),
        rent_formula=float(stats["formula"][0]),
        rent_formula_se=float(stats["formula"][1]),
        diff=float(stats["diff"][0]),
        diff_se=float(stats["diff"][1]),
        min_profile_rent=float(direct.min()),
    )
