"""Allocation problem: dual fixed point, primal recovery and a reference solver.

The principal buys ``q_i`` at every node so that, after quadratic line
losses, supply meets demand, at least total bid cost. Its concave dual
in the nodal prices ``lam`` is maximized coordinate-wise in closed form;
iterating those best responses from the top cost vector decreases
monotonically to the unique dual optimum.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    BracketFailure,
    MonotonicityBreach,
    NonPositiveMultiplier,
    NotConverged,
    OutOfBox,
    ValidationError,
)
from .market import CostProfile, Network, validate_instance

log = logging.getLogger(__name__)

__all__ = [
    "DualSolution",
    "Allocation",
    "nodal_supply",
    "supply_all",
    "supply_jacobian",
    "segment_threshold",
    "best_response",
    "solve_fixed_point",
    "recover_primal",
    "dual_objective",
    "reference_solve",
    "rate_bound",
    "allocate",
    "quantity_path",
    "solution_to_dict",
]

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100_000


@dataclass
class DualSolution:
    """Nodal multipliers returned by a dual solver.

    ``trace[k]`` is the sup-norm change of sweep ``k`` (fixed point) or the
    best objective so far (reference solver). ``max_raise`` is the largest
    increase any coordinate attempted during the monotone sweeps; it is
    floating-point noise for a correct run.
    """

    lam: np.ndarray
    iterations: int
    trace: np.ndarray
    converged: bool
    tol: float
    solver: str = "fixed_point"
    max_raise: float = 0.0
    wall_time: float = 0.0
    history: np.ndarray | None = field(default=None, repr=False)


@dataclass
class Allocation:
    """Primal allocation recovered from dual prices.

    Flows and the flow dual ``gamma`` live on directed arcs aligned with
    ``net.arc_src`` / ``net.nbr``.
    """

    lam: np.ndarray
    q: np.ndarray
    q_seg: np.ndarray
    h: np.ndarray
    gamma: np.ndarray
    nu: np.ndarray
    primal_cost: float
    dual_value: float
    sd_residual: np.ndarray
    complementarity: np.ndarray
    clamp: float

    @property
    def duality_gap(self) -> float:
        return abs(self.primal_cost - self.dual_value)

    def flows(self, net: Network, atol: float = 0.0) -> list[tuple[int, int, float]]:
        return [
            (int(a), int(b), float(f))
            for a, b, f in zip(net.arc_src, net.nbr, self.h)
            if f > atol
        ]


def _arrays(net: Network):
    return net.indptr, net.nbr, net.nbr_loss, net.arc_src, net.demand


def _full_lambda(net: Network, lam, i: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape == (net.n - 1,):
        lam = np.insert(lam, i, 1.0)
    elif lam.shape != (net.n,):
        raise ValidationError(f"lambda has shape {lam.shape}; expected ({net.n},) or ({net.n - 1},)")
    return lam


def _supply_at(net: Network, x: float, i: int, lam: np.ndarray) -> float:
    nb = net.neighbors(i)
    r = net.nbr_loss[net.indptr[i] : net.indptr[i + 1]]
    lj = lam[nb]
    diff = lj - x
    den = x + lj
    return float(net.demand[i] + np.sum(diff / (r * den) + diff * diff / (2 * r * den * den)))


def nodal_supply(net: Network, lam, i: int) -> float:
    """Production at node ``i`` implied by the multipliers ``lam``.

    Combines the node's demand with its net exports and its half of the
    line losses on each incident edge, all evaluated at the flows that
    are optimal for these prices. Strictly decreasing in ``lam[i]`` and
    nondecreasing in each neighbour's price.
    """
    lam = _full_lambda(net, lam, i)
    if lam[i] <= 0 or np.any(lam[net.neighbors(i)] <= 0):
        raise NonPositiveMultiplier(f"multipliers at node {i} and its neighbours must be > 0")
    return _supply_at(net, lam[i], i, lam)


def supply_all(net: Network, lam) -> np.ndarray:
    """Vector of :func:`nodal_supply` over all nodes."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        raise NonPositiveMultiplier("all multipliers must be > 0")
    lj = lam[net.nbr]
    li = lam[net.arc_src]
    diff = lj - li
    den = li + lj
    r = net.nbr_loss
    return net.demand + np.bincount(net.arc_src, diff / (r * den) + diff**2 / (2 * r * den**2), net.n)


def supply_jacobian(net: Network, lam, i: int) -> tuple[float, np.ndarray]:
    """Partial derivatives of node ``i``'s supply.

    Returns ``(own, cross)`` where ``own`` is the derivative in ``lam[i]``
    (negative) and ``cross[k]`` the derivative in ``lam[k]`` (positive for
    neighbours, zero elsewhere, and zero at ``k == i``).
    """
    lam = _full_lambda(net, lam, i)
    nb = net.neighbors(i)
    if lam[i] <= 0 or np.any(lam[nb] <= 0):
        raise NonPositiveMultiplier(f"multipliers at node {i} and its neighbours must be > 0")
    r = net.nbr_loss[net.indptr[i] : net.indptr[i + 1]]
    li, lj = lam[i], lam[nb]
    den3 = r * (li + lj) ** 3
    own = float(-np.sum(4 * lj**2 / den3))
    cross = np.zeros(net.n)
    cross[nb] = 4 * li * lj / den3
    return own, cross


def segment_threshold(
    net: Network,
    i: int,
    k: int,
    lam,
    q_bar: float,
    *,
    c_hi: float | None = None,
    root_tol: float = 1e-10,
    max_halvings: int = 200,
) -> float:
    """Price at which node ``i`` would produce exactly ``k * q_bar``.

    Found by bisection. The bracket starts at ``[eps, c_hi]`` and its top
    doubles until the supply falls below the target. ``lam`` holds the
    other nodes' prices (a full vector, entry ``i`` ignored, or the
    ``n - 1`` others).

    Raises
    ------
    BracketFailure
        If the supply never crosses ``k * q_bar``; with a valid network
        this only happens for ``k >= 1`` targets above the node's reach.
    """
    lam = _full_lambda(net, lam, i)
    others = np.delete(lam, i)
    if np.any(lam[net.neighbors(i)] <= 0):
        raise NonPositiveMultiplier(f"neighbour multipliers of node {i} must be > 0")
    target = k * q_bar
    top = float(c_hi if c_hi is not None else max(others.max(), 1.0))
    lo = 1e-12 * top
    if _supply_at(net, lo, i, lam) - target <= 0:
        raise BracketFailure(f"node {i}: supply never reaches {target} (k={k})")
    hi = top
    for _ in range(64):
        if _supply_at(net, hi, i, lam) - target < 0:
            break
        lo, hi = hi, 2 * hi
    else:
        raise BracketFailure(f"node {i}: supply stays above {target} (k={k}); feasibility violated")
    x = 0.5 * (lo + hi)
    for _ in range(max_halvings):
        x = 0.5 * (lo + hi)
        g = _supply_at(net, x, i, lam) - target
        if abs(g) <= root_tol or x in (lo, hi):
            break
        if g > 0:
            lo = x
        else:
            hi = x
    return x


def best_response(
    net: Network,
    costs: CostProfile,
    i: int,
    lam,
    *,
    root_tol: float = 1e-13,
) -> float:
    """Maximizer of the dual objective in ``lam[i]`` with the others fixed.

    Takes the smallest of three kinds of candidate: the top slope; every
    slope ``c_j`` at which the node would produce less than ``j`` full
    segments; and every threshold price ``g_k`` that falls inside its own
    slope interval ``[c_k, c_{k+1}]`` (with ``c_0 = c_lo``). Candidates
    failing their condition are left out rather than counted as zero.
    """
    lam = _full_lambda(net, lam, i)
    c = costs.slopes[i]
    n_seg = c.size
    q_bar = costs.q_bar
    cands = [c[-1]]
    for j in range(1, n_seg + 1):
        if _supply_at(net, c[j - 1], i, lam) < j * q_bar:
            cands.append(c[j - 1])
    bounds = np.concatenate([[costs.c_lo], c])
    for k in range(n_seg):
        try:
            g = segment_threshold(net, i, k, lam, q_bar, c_hi=costs.c_hi, root_tol=root_tol)
        except BracketFailure:
            continue
        if bounds[k] <= g <= bounds[k + 1]:
            cands.append(g)
    return float(min(cands))


def _breach_threshold(costs: CostProfile) -> float:
    return 1e-11 * max(1.0, costs.c_hi)


def solve_fixed_point(
    net: Network,
    costs: CostProfile,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    lam0=None,
    backend: str | None = None,
    keep_history: bool = False,
    validate: bool = True,
) -> DualSolution:
    """Iterate the best-response map from the top slopes until it settles.

    Each sweep updates every node from the previous iterate (Jacobi). The
    iterates must not increase; an increase beyond rounding raises
    :class:`MonotonicityBreach`. ``lam0`` may warm-start the iteration
    from a point that the map does not push upward, for instance the
    solution of a componentwise costlier instance; other warm starts fall
    back to the cold start.

    Stops when the largest decrease of a sweep is at most ``tol``. If
    ``max_iter`` sweeps pass first, the current iterate is returned with
    ``converged=False``.
    """
    if validate:
        validate_instance(net, costs)
    kern = kernels.get_backend(backend or kernels.BACKEND)
    arrays = _arrays(net)
    slopes = np.ascontiguousarray(costs.slopes)
    q_bar = float(costs.q_bar)
    breach = _breach_threshold(costs)
    t0 = time.perf_counter()

    lam = np.array(slopes[:, -1], dtype=np.float64)
    if lam0 is not None:
        warm = np.array(lam0, dtype=np.float64)
        probe = np.empty_like(warm)
        kern.sweep(warm, probe, *arrays, slopes, q_bar)
        if np.all(probe <= warm + breach):
            lam = np.minimum(warm, probe)
        else:
            log.debug("warm start is pushed upward by the map; cold start instead")

    if keep_history:
        history = [lam.copy()]
        trace = []
        one = np.zeros(1)
        max_raise = 0.0
        converged = False
        for _ in range(max_iter):
            _, converged, mr = kern.solve(lam, *arrays, slopes, q_bar, tol, 1, one)
            max_raise = max(max_raise, mr)
            trace.append(one[0])
            history.append(lam.copy())
            if converged:
                break
        iters, trace_arr, hist = len(trace), np.array(trace), np.array(history)
    else:
        trace_arr = np.zeros(max_iter)
        iters, converged, max_raise = kern.solve(lam, *arrays, slopes, q_bar, tol, max_iter, trace_arr)
        trace_arr = trace_arr[:iters].copy()
        hist = None

    if max_raise > breach:
        raise MonotonicityBreach(f"a sweep raised a multiplier by {max_raise:.3g}")
    if not converged:
        log.warning("fixed point not converged after %d sweeps (last step %.3g)", iters, trace_arr[-1])
    return DualSolution(
        lam=lam,
        iterations=int(iters),
        trace=trace_arr,
        converged=bool(converged),
        tol=tol,
        max_raise=float(max_raise),
        wall_time=time.perf_counter() - t0,
        history=hist,
    )


def dual_objective(net: Network, costs: CostProfile, lam, *, check_box: bool = True) -> float:
    """Dual function value at ``lam``.

    The quadratic loss penalty is summed over ordered neighbour pairs, so
    each undirected edge contributes twice.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if check_box:
        slack = 1e-9 * max(1.0, costs.c_hi)
        if np.any(lam < costs.c_lo - slack) or np.any(lam > costs.c_hi + slack):
            raise OutOfBox(f"lambda outside [{costs.c_lo}, {costs.c_hi}]")
    hinge = np.maximum(lam[:, None] - costs.slopes, 0.0).sum()
    li, lj = lam[net.arc_src], lam[net.nbr]
    penalty = np.sum((li - lj) ** 2 / (4 * net.nbr_loss * (li + lj)))
    return float(lam @ net.demand - costs.q_bar * hinge - penalty)


def snap_production(q, q_bar: float, n_seg: int) -> np.ndarray:
    """Round productions within rounding distance of a multiple of ``q_bar`` onto it.

    A price found as a threshold root pins the node's production to
    ``k * q_bar`` only up to floating-point error; snapping keeps idle
    segments exactly idle and full ones exactly full.
    """
    q = np.asarray(q, dtype=np.float64)
    tol = 1e-12 * (1.0 + q_bar * n_seg)
    k = np.rint(q / q_bar)
    return np.where(np.abs(q - k * q_bar) <= tol, k * q_bar, q)


def recover_primal(net: Network, costs: CostProfile, sol: DualSolution) -> Allocation:
    """Productions, flows and remaining duals implied by converged prices."""
    if not sol.converged:
        raise NotConverged("cannot recover a primal allocation from an unconverged solve")
    lam = np.asarray(sol.lam, dtype=np.float64)
    li, lj = lam[net.arc_src], lam[net.nbr]
    r = net.nbr_loss
    h = np.maximum(lj - li, 0.0) / (r * (li + lj))
    gamma = np.maximum(li - lj, 0.0)

    raw = supply_all(net, lam)
    cap = costs.n_segments * costs.q_bar
    q = np.clip(raw, 0.0, cap)
    clamp = float(np.max(np.abs(q - raw))) if q.size else 0.0
    if clamp > 1e-8:
        log.warning("recovered production clamped by %.3g", clamp)
    q = snap_production(q, costs.q_bar, costs.n_segments)
    q_seg = np.clip(q[:, None] - costs.q_bar * np.arange(costs.n_segments), 0.0, costs.q_bar)
    nu = np.maximum(lam[:, None] - costs.slopes, 0.0)

    loss_half = 0.5 * h * h * r
    sd = q - net.demand
    sd = sd + np.bincount(net.nbr, h - loss_half, net.n)
    sd = sd - np.bincount(net.arc_src, h + loss_half, net.n)
    return Allocation(
        lam=lam,
        q=q,
        q_seg=q_seg,
        h=h,
        gamma=gamma,
        nu=nu,
        primal_cost=float(np.sum(q_seg * costs.slopes)),
        dual_value=dual_objective(net, costs, lam, check_box=False),
        sd_residual=sd,
        complementarity=h * h[net.arc_reverse],
        clamp=clamp,
    )


def allocate(net: Network, costs: CostProfile, tol: float = DEFAULT_TOL, **kwargs) -> Allocation:
    """Solve the dual by fixed point and recover the primal allocation."""
    sol = solve_fixed_point(net, costs, tol, **kwargs)
    return recover_primal(net, costs, sol)


def _penalty_grad(net: Network, lam: np.ndarray) -> np.ndarray:
    li, lj = lam[net.arc_src], lam[net.nbr]
    s = li + lj
    return np.bincount(net.arc_src, (li - lj) * (li + 3 * lj) / (2 * net.nbr_loss * s * s), net.n)


def reference_solve(
    net: Network,
    costs: CostProfile,
    tol: float = 1e-13,
    max_iter: int = 1_000_000,
    *,
    stall: int = 200,
) -> DualSolution:
    """Projected supergradient ascent on the dual over ``[c_lo, c_hi]^n``.

    Independent of the fixed-point machinery: the supergradient is built
    from the hinge counts and the derivative of the loss penalty directly.
    Each coordinate moves along the sign of its supergradient with its own
    step, halved whenever that sign flips (the iterate jumped across the
    optimum or a kink) and grown by 20% while it persists. Stops once the
    best objective has improved by at most ``tol`` (relative) over
    ``stall`` consecutive steps.
    """
    validate_instance(net, costs)
    t0 = time.perf_counter()
    lo, hi = costs.c_lo, costs.c_hi
    width = max(hi - lo, 1e-3 * hi)
    slopes, q_bar, d = costs.slopes, costs.q_bar, net.demand
    lam = np.full(net.n, 0.5 * (lo + hi))
    step = np.full(net.n, 0.1 * width)
    g_prev = np.zeros(net.n)
    best, best_lam, mark = -np.inf, lam.copy(), -np.inf
    since, it, converged = 0, 0, False
    trace = []
    for it in range(1, max_iter + 1):
        val = dual_objective(net, costs, lam, check_box=False)
        if val > best:
            best, best_lam = val, lam.copy()
        trace.append(best)
        since += 1
        if since >= stall:
            if best - mark <= tol * max(1.0, abs(best)):
                converged = True
                break
            mark, since = best, 0
        g = d - q_bar * (lam[:, None] >= slopes).sum(axis=1) - _penalty_grad(net, lam)
        turn = g * g_prev
        step = np.where(turn > 0, np.minimum(1.2 * step, width), np.where(turn < 0, 0.5 * step, step))
        g = np.where(turn < 0, 0.0, g)
        lam = np.clip(lam + step * np.sign(g), lo, hi)
        g_prev = g
    return DualSolution(
        lam=best_lam,
        iterations=it,
        trace=np.array(trace),
        converged=converged,
        tol=tol,
        solver="reference",
        wall_time=time.perf_counter() - t0,
    )


def rate_bound(net: Network, costs: CostProfile) -> float:
    """Lower bound on how fast a threshold price follows a neighbour's price.

    ``(c_lo / c_hi)**5 / (D * alpha)`` where ``alpha`` is the largest
    ratio between two loss coefficients and ``D`` is the larger of the
    segment count and the maximum node degree.
    """
    alpha = float(net.loss.max() / net.loss.min())
    spread = max(costs.n_segments, int(net.degree.max()))
    return (costs.c_lo / costs.c_hi) ** 5 / (spread * alpha)


def quantity_path(
    net: Network,
    slopes: np.ndarray,
    q_bar: float,
    agent: int,
    seg: int,
    values,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    backend: str | None = None,
) -> np.ndarray:
    """Production of ``agent`` on segment ``seg`` as that slope walks down ``values``.

    ``values`` must be nonincreasing. The first point is solved from the
    top slopes and every later point is warm-started from the previous
    solution, which bounds it from above. ``slopes`` is not modified.

    Raises
    ------
    NotConverged
        If any point exhausts ``max_iter`` sweeps.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.size > 1 and np.any(np.diff(values) > 0):
        raise ValidationError("path values must be nonincreasing")
    kern = kernels.get_backend(backend or kernels.BACKEND)
    work = np.array(slopes, dtype=np.float64, order="C")
    out = np.empty(values.size)
    if values.size == 0:
        return out
    work[agent, seg] = values[0]
    lam = work[:, -1].copy()
    failures, max_raise = kern.solve_path(
        lam, *_arrays(net), work, float(q_bar), int(agent), int(seg), values, tol, max_iter, out
    )
    if max_raise > 1e-11 * max(1.0, float(work.max())):
        raise MonotonicityBreach(f"a warm-started sweep raised a multiplier by {max_raise:.3g}")
    if failures:
        raise NotConverged(f"{failures} path points did not converge within {max_iter} sweeps")
    return out


def solution_to_dict(net: Network, sol: DualSolution, alloc: Allocation) -> dict:
    """Plain-data dump of a solve: prices, productions, flows and objectives."""
    return {
        "lambda": alloc.lam.tolist(),
        "q": alloc.q.tolist(),
        "q_seg": alloc.q_seg.tolist(),
        "h": [{"from": a, "to": b, "flow": f} for a, b, f in alloc.flows(net)],
        "primal_cost": alloc.primal_cost,
        "dual_value": alloc.dual_value,
        "iterations": sol.iterations,
        "trace": np.asarray(sol.trace).tolist(),
    }
