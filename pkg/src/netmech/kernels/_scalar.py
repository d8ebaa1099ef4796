"""Loop kernels compiled with numba.

Every function takes the network in CSR form (``indptr``, ``nbr``,
``rr`` = per-arc loss) plus ``src`` (arc source, unused here but kept so
both backends share one signature).
"""

import numpy as np
from numba import njit

_EPS = 2.220446049250313e-16


@njit(cache=True)
def supply(x, i, lam, indptr, nbr, rr, demand):
    s = demand[i]
    for k in range(indptr[i], indptr[i + 1]):
        lj = lam[nbr[k]]
        diff = lj - x
        den = x + lj
        s += diff / (rr[k] * den) + diff * diff / (2.0 * rr[k] * den * den)
    return s


@njit(cache=True)
def supply_slope(x, i, lam, indptr, nbr, rr, demand):
    s = demand[i]
    ds = 0.0
    for k in range(indptr[i], indptr[i + 1]):
        lj = lam[nbr[k]]
        diff = lj - x
        den = x + lj
        s += diff / (rr[k] * den) + diff * diff / (2.0 * rr[k] * den * den)
        ds -= 4.0 * lj * lj / (rr[k] * den * den * den)
    return s, ds


@njit(cache=True)
def threshold_root(target, a, b, x0, i, lam, indptr, nbr, rr, demand):
    # F(a) >= target >= F(b) and F decreasing: Newton steps, bisection fallback
    x = x0 if a < x0 < b else 0.5 * (a + b)
    for _ in range(200):
        f, df = supply_slope(x, i, lam, indptr, nbr, rr, demand)
        g = f - target
        if g > 0.0:
            a = x
        elif g < 0.0:
            b = x
        else:
            return x
        xn = x - g / df if df < 0.0 else 0.5 * (a + b)
        if not (a < xn < b):
            xn = 0.5 * (a + b)
        if abs(xn - x) <= 2.0 * _EPS * x or b - a <= 4.0 * _EPS * b:
            return xn
        x = xn
    return x


@njit(cache=True)
def best_response(i, lam, indptr, nbr, rr, demand, slopes, q_bar):
    n_seg = slopes.shape[1]
    prev = 0.0
    for j in range(n_seg):
        c = slopes[i, j]
        f = supply(c, i, lam, indptr, nbr, rr, demand)
        if f < (j + 1) * q_bar:
            if f <= j * q_bar:
                return threshold_root(j * q_bar, prev, c, lam[i], i, lam, indptr, nbr, rr, demand)
            return c
        prev = c
    return slopes[i, n_seg - 1]


@njit(cache=True)
def snap(q, q_bar, n_seg):
    # a price sitting on a threshold root fixes production only up to rounding
    tol = 1e-12 * (1.0 + q_bar * n_seg)
    if q <= tol:
        return 0.0
    if q >= q_bar - tol:
        return q_bar
    return q


@njit(cache=True)
def sweep(lam, out, indptr, nbr, rr, src, demand, slopes, q_bar):
    for i in range(lam.shape[0]):
        out[i] = best_response(i, lam, indptr, nbr, rr, demand, slopes, q_bar)


@njit(cache=True)
def solve(lam, indptr, nbr, rr, src, demand, slopes, q_bar, tol, max_iter, trace):
    """Jacobi iteration in place. Returns (sweeps, converged, largest raw increase)."""
    n = lam.shape[0]
    new = np.empty(n)
    max_raise = 0.0
    for it in range(max_iter):
        sweep(lam, new, indptr, nbr, rr, src, demand, slopes, q_bar)
        dec = 0.0
        for i in range(n):
            d = lam[i] - new[i]
            if -d > max_raise:
                max_raise = -d
            if d > 0.0:
                if d > dec:
                    dec = d
                lam[i] = new[i]
        if it < trace.shape[0]:
            trace[it] = dec
        if dec <= tol:
            return it + 1, True, max_raise
    return max_iter, False, max_raise


@njit(cache=True)
def solve_path(lam, indptr, nbr, rr, src, demand, slopes, q_bar, agent, seg, values,
               tol, max_iter, out_q):
    """Re-solve while ``slopes[agent, seg]`` walks down ``values``.

    Each solution warm-starts the next, which is valid because a costlier
    instance's fixed point dominates. ``out_q[p]`` receives the agent's
    production on segment ``seg``.
    """
    empty = np.empty(0)
    failures = 0
    max_raise = 0.0
    lo = seg * q_bar
    for p in range(values.shape[0]):
        slopes[agent, seg] = values[p]
        _, ok, mr = solve(lam, indptr, nbr, rr, src, demand, slopes, q_bar, tol, max_iter, empty)
        if not ok:
            failures += 1
        if mr > max_raise:
            max_raise = mr
        q = supply(lam[agent], agent, lam, indptr, nbr, rr, demand) - lo
        out_q[p] = snap(q, q_bar, slopes.shape[1])
    return failures, max_raise
