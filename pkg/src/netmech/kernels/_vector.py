"""Pure-numpy kernels: every node's best response is computed at once."""

import numpy as np

_EPS = np.finfo(np.float64).eps


def supply_all(x, lam, nbr, rr, src, demand):
    """``F_i(x_i, lam_{-i})`` for every node ``i`` simultaneously."""
    lj = lam[nbr]
    xs = x[src]
    diff = lj - xs
    den = xs + lj
    return demand + np.bincount(src, diff / (rr * den) + diff * diff / (2.0 * rr * den * den), demand.size)


def _supply_slope_all(x, lam, nbr, rr, src, demand):
    lj = lam[nbr]
    xs = x[src]
    diff = lj - xs
    den = xs + lj
    n = demand.size
    f = demand + np.bincount(src, diff / (rr * den) + diff * diff / (2.0 * rr * den * den), n)
    df = -np.bincount(src, 4.0 * lj * lj / (rr * den ** 3), n)
    return f, df


def _threshold_roots(target, a, b, lam, nbr, rr, src, demand, active):
    x = np.where((a < lam) & (lam < b), lam, 0.5 * (a + b))
    done = ~active
    for _ in range(200):
        if done.all():
            break
        f, df = _supply_slope_all(x, lam, nbr, rr, src, demand)
        g = f - target
        live = ~done
        a = np.where(live & (g > 0), x, a)
        b = np.where(live & (g < 0), x, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = np.where(df < 0, x - g / df, 0.5 * (a + b))
        xn = np.where((a < xn) & (xn < b), xn, 0.5 * (a + b))
        exact = g == 0
        xn = np.where(exact, x, xn)
        stop = exact | (np.abs(xn - x) <= 2 * _EPS * x) | (b - a <= 4 * _EPS * b)
        x = np.where(done, x, xn)
        done |= live & stop
    return x


def snap(q, q_bar, n_seg):
    # a price sitting on a threshold root fixes production only up to rounding
    tol = 1e-12 * (1.0 + q_bar * n_seg)
    if q <= tol:
        return 0.0
    if q >= q_bar - tol:
        return q_bar
    return float(q)


def sweep(lam, out, indptr, nbr, rr, src, demand, slopes, q_bar):
    n, n_seg = slopes.shape
    out[:] = slopes[:, -1]
    pending = np.ones(n, dtype=bool)
    root = np.zeros(n, dtype=bool)
    lo = np.zeros(n)
    hi = np.zeros(n)
    target = np.zeros(n)
    prev = np.zeros(n)
    for j in range(n_seg):
        c = slopes[:, j]
        f = supply_all(c, lam, nbr, rr, src, demand)
        hit = pending & (f < (j + 1) * q_bar)
        need = hit & (f <= j * q_bar)
        out[hit & ~need] = c[hit & ~need]
        root |= need
        lo[need], hi[need], target[need] = prev[need], c[need], j * q_bar
        pending &= ~hit
        prev = c
    if root.any():
        x = _threshold_roots(target, lo, hi, lam, nbr, rr, src, demand, root)
        out[root] = x[root]


def solve(lam, indptr, nbr, rr, src, demand, slopes, q_bar, tol, max_iter, trace):
    new = np.empty_like(lam)
    max_raise = 0.0
    for it in range(max_iter):
        sweep(lam, new, indptr, nbr, rr, src, demand, slopes, q_bar)
        d = lam - new
        max_raise = max(max_raise, float(-d.min()))
        np.minimum(lam, new, out=lam)
        dec = float(max(d.max(), 0.0))
        if it < trace.shape[0]:
            trace[it] = dec
        if dec <= tol:
            return it + 1, True, max_raise
    return max_iter, False, max_raise


def solve_path(lam, indptr, nbr, rr, src, demand, slopes, q_bar, agent, seg, values,
               tol, max_iter, out_q):
    empty = np.empty(0)
    failures = 0
    max_raise = 0.0
    for p, v in enumerate(values):
        slopes[agent, seg] = v
        _, ok, mr = solve(lam, indptr, nbr, rr, src, demand, slopes, q_bar, tol, max_iter, empty)
        failures += not ok
        max_raise = max(max_raise, mr)
        s = demand[agent]
        k = slice(indptr[agent], indptr[agent + 1])
        lj = lam[nbr[k]]
        diff = lj - lam[agent]
        den = lam[agent] + lj
        s += np.sum(diff / (rr[k] * den) + diff * diff / (2.0 * rr[k] * den * den))
        out_q[p] = snap(s - seg * q_bar, q_bar, slopes.shape[1])
    return failures, max_raise
