"""Networks, piecewise-linear cost profiles and random benchmark instances."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateEdge,
    FeasibilityViolation,
    IsolatedNode,
    NegativeQuantity,
    NonPositiveLoss,
    OutOfRange,
    ParamError,
    SelfLoop,
    ValidationError,
)

__all__ = [
    "Network",
    "CostProfile",
    "build_network",
    "generate_ba_network",
    "generate_costs",
    "cost_eval",
    "segment_split",
    "max_production",
    "validate_instance",
    "instance_to_dict",
    "instance_from_dict",
    "load_instance",
    "dump_instance",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """Undirected transmission network with quadratic losses.

    Attributes
    ----------
    demand : ndarray, shape (n,)
        Inelastic demand at each node.
    edges : ndarray of int, shape (m, 2)
        Unordered edges stored as ``(a, b)`` with ``a < b``.
    loss : ndarray, shape (m,)
        Loss coefficient ``r`` of each edge. Sending ``h`` over an edge
        loses ``r h**2``, half charged to each endpoint.

    Use :func:`build_network` to construct a validated instance.
    """

    demand: np.ndarray
    edges: np.ndarray
    loss: np.ndarray

    @property
    def n(self) -> int:
        return int(self.demand.shape[0])

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def _csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.n
        a, b = self.edges[:, 0], self.edges[:, 1]
        src = np.concatenate([a, b])
        dst = np.concatenate([b, a])
        r = np.concatenate([self.loss, self.loss])
        order = np.lexsort((dst, src))
        src, dst, r = src[order], dst[order], r[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return (
            _frozen(indptr),
            _frozen(dst.astype(np.int64)),
            _frozen(r.astype(np.float64)),
        )

    @property
    def indptr(self) -> np.ndarray:
        """CSR row pointer: neighbours of ``i`` are ``nbr[indptr[i]:indptr[i+1]]``."""
        return self._csr[0]

    @property
    def nbr(self) -> np.ndarray:
        return self._csr[1]

    @property
    def nbr_loss(self) -> np.ndarray:
        return self._csr[2]

    @cached_property
    def arc_src(self) -> np.ndarray:
        """Source node of each directed arc, aligned with :attr:`nbr`."""
        return _frozen(np.repeat(np.arange(self.n), np.diff(self.indptr)))

    @cached_property
    def arc_reverse(self) -> np.ndarray:
        """Index of the opposite arc ``(i', i)`` for every arc ``(i, i')``."""
        key = self.arc_src * self.n + self.nbr
        rev = self.nbr * self.n + self.arc_src
        return _frozen(np.searchsorted(key, rev))

    @cached_property
    def degree(self) -> np.ndarray:
        return _frozen(np.diff(self.indptr))

    def neighbors(self, i: int) -> np.ndarray:
        return self.nbr[self.indptr[i] : self.indptr[i + 1]]

    def loss_between(self, a: int, b: int) -> float:
        lo, hi = self.indptr[a], self.indptr[a + 1]
        k = np.searchsorted(self.nbr[lo:hi], b)
        if k == hi - lo or self.nbr[lo + k] != b:
            raise KeyError((a, b))
        return float(self.nbr_loss[lo + k])

    @cached_property
    def export_capacity(self) -> np.ndarray:
        """Per-node ``sum_{i'} 1 / (2 r_{i,i'})``: the most a node can push out."""
        return _frozen(np.bincount(self.arc_src, 0.5 / self.nbr_loss, self.n))

    def feasibility_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper feasibility terms ``d - sum 1/(2r)``, ``d + sum 3/(2r)``."""
        s = self.export_capacity
        return self.demand - s, self.demand + 3.0 * s


def build_network(
    n: int,
    demand: Sequence[float],
    edges: Iterable[Sequence[float]],
) -> Network:
    """Validate raw data and return a :class:`Network`.

    ``edges`` holds ``(a, b, r)`` triples with 0-based node indices.
    Raises the specific :class:`~netmech.errors.ValidationError`
    subclass naming the first violated invariant.
    """
    d = np.asarray(demand, dtype=np.float64)
    if d.shape != (n,):
        raise ValidationError(f"demand has length {d.size}, expected n={n}")
    if n < 2:
        raise ValidationError("a network needs at least two nodes")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        bad = int(np.flatnonzero(~(d >= 0))[0])
        raise ValidationError(f"node {bad}: demand {d[bad]} must be finite and >= 0")

    pairs, loss, seen = [], [], set()
    for e in edges:
        if len(e) != 3:
            raise ValidationError(f"edge {e!r} is not an (a, b, r) triple")
        a, b, r = int(e[0]), int(e[1]), float(e[2])
        if a == b:
            raise SelfLoop(f"edge ({a}, {b}) is a self-loop")
        if not (0 <= a < n and 0 <= b < n):
            raise ValidationError(f"edge ({a}, {b}) has an endpoint outside 0..{n - 1}")
        if not r > 0 or not np.isfinite(r):
            raise NonPositiveLoss(f"edge ({a}, {b}) has loss r={r}; need r > 0")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise DuplicateEdge(f"edge {key} listed twice")
        seen.add(key)
        pairs.append(key)
        loss.append(r)

    edge_arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    net = Network(
        demand=_frozen(d.copy()),
        edges=_frozen(edge_arr),
        loss=_frozen(np.array(loss, dtype=np.float64)),
    )
    isolated = np.flatnonzero(net.degree == 0)
    if isolated.size:
        raise IsolatedNode(f"node {int(isolated[0])} has no neighbour")
    lower, upper = net.feasibility_terms()
    bad = np.flatnonzero(lower >= 0)
    if bad.size:
        raise FeasibilityViolation(int(bad[0]), float(lower[bad[0]]))
    bad = np.flatnonzero(upper <= 0)
    if bad.size:
        i = int(bad[0])
        raise FeasibilityViolation(i, float(upper[i]), f"node {i}: d_i + sum 3/(2r) must be > 0")
    return net


def _ba_edges(n: int, m: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    # complete seed graph on m+1 nodes, then degree-proportional attachment
    edges = [(a, b) for a in range(m + 1) for b in range(a + 1, m + 1)]
    degree = np.zeros(n, dtype=np.float64)
    degree[: m + 1] = m
    for new in range(m + 1, n):
        p = degree[:new] / degree[:new].sum()
        targets = rng.choice(new, size=m, replace=False, p=p)
        for t in sorted(int(x) for x in targets):
            edges.append((t, new))
            degree[t] += 1
        degree[new] = m
    return edges


def generate_ba_network(
    n: int,
    m: int = 2,
    seed: int | None = 0,
    r_range: tuple[float, float] = (0.5, 2.0),
    d_range: tuple[float, float] | None = None,
) -> Network:
    """Random Barabasi-Albert network with uniform losses and demands.

    The graph starts from a complete graph on ``m + 1`` nodes; every new
    node links to ``m`` distinct earlier nodes drawn proportionally to
    degree. Loss coefficients are uniform on ``r_range``. Demands are
    uniform on ``d_range``, which defaults to
    ``[0, 0.4 * min_i sum 1/(2 r_i)]``; any node whose demand breaks the
    feasibility window is redrawn uniformly on ``(0, sum 1/(2 r_i))``.
    """
    if m < 1 or n < m + 1:
        raise ParamError(f"need m >= 1 and n >= m + 1, got n={n}, m={m}")
    r_lo, r_hi = map(float, r_range)
    if not (0 < r_lo <= r_hi):
        raise ParamError(f"r_range {r_range} must satisfy 0 < lo <= hi")
    if d_range is not None:
        d_lo, d_hi = map(float, d_range)
        if not (0 <= d_lo <= d_hi):
            raise ParamError(f"d_range {d_range} must satisfy 0 <= lo <= hi")
        if d_lo >= m / (2 * r_lo):
            raise ParamError(
                f"d_range lower bound {d_lo} leaves no feasible demand at degree-{m} nodes"
            )

    rng = np.random.default_rng(seed)
    pairs = _ba_edges(n, m, rng)
    r = rng.uniform(r_lo, r_hi, size=len(pairs))
    cap = np.zeros(n)
    for (a, b), rr in zip(pairs, r):
        cap[a] += 0.5 / rr
        cap[b] += 0.5 / rr
    if d_range is None:
        d_range = (0.0, 0.4 * float(cap.min()))
    d = rng.uniform(d_range[0], d_range[1], size=n)
    for i in np.flatnonzero(d >= cap):
        for _ in range(100):
            d[i] = rng.uniform(0.0, cap[i])
            if 0 < d[i] < cap[i]:
                break
        else:
            raise ParamError(f"could not draw a feasible demand for node {i}")
    return build_network(n, d, [(a, b, rr) for (a, b), rr in zip(pairs, r)])


@dataclass(frozen=True, eq=False)
class CostProfile:
    """Piecewise-linear production costs for every agent.

    ``slopes[i, j]`` is agent ``i``'s marginal cost on its ``j``-th
    segment ``[j q_bar, (j + 1) q_bar]``. Rows are nondecreasing and lie
    within ``[c_lo, c_hi]``.
    """

    slopes: np.ndarray
    q_bar: float
    c_lo: float
    c_hi: float

    def __post_init__(self):
        s = np.array(self.slopes, dtype=np.float64, ndmin=2)
        if s.ndim != 2 or s.shape[1] < 1:
            raise ValidationError(f"slopes must be an (n, N) matrix, got shape {s.shape}")
        object.__setattr__(self, "slopes", _frozen(s))
        if not self.q_bar > 0:
            raise ValidationError(f"q_bar={self.q_bar} must be > 0")
        if not (0 < self.c_lo <= self.c_hi):
            raise ValidationError(f"need 0 < c_lo <= c_hi, got {self.c_lo}, {self.c_hi}")
        if np.any(np.diff(s, axis=1) < 0):
            i = int(np.flatnonzero(np.any(np.diff(s, axis=1) < 0, axis=1))[0])
            raise ValidationError(f"agent {i}: slopes {s[i]} are not nondecreasing")
        tol = 1e-12 * self.c_hi
        if s.min() < self.c_lo - tol or s.max() > self.c_hi + tol:
            raise ValidationError(
                f"slopes span [{s.min()}, {s.max()}] outside [{self.c_lo}, {self.c_hi}]"
            )

    @property
    def n(self) -> int:
        return int(self.slopes.shape[0])

    @property
    def n_segments(self) -> int:
        return int(self.slopes.shape[1])

    def with_slopes(self, slopes: np.ndarray, c_lo: float | None = None, c_hi: float | None = None):
        return CostProfile(
            slopes,
            self.q_bar,
            self.c_lo if c_lo is None else c_lo,
            self.c_hi if c_hi is None else c_hi,
        )


def cost_eval(slopes: Sequence[float], q_bar: float, q: float) -> float:
    """Production cost of ``q`` units under the given slope vector."""
    if q < 0:
        raise NegativeQuantity(f"quantity {q} < 0")
    c = np.asarray(slopes, dtype=np.float64)
    starts = q_bar * np.arange(c.size)
    return float(c @ np.clip(q - starts, 0.0, q_bar))


def segment_split(q: float, q_bar: float, n_segments: int) -> np.ndarray:
    """Split a production level into per-segment quantities, filling low segments first."""
    if q < 0 or q > n_segments * q_bar * (1 + 1e-12):
        raise OutOfRange(f"q={q} outside [0, {n_segments * q_bar}]")
    return np.clip(q - q_bar * np.arange(n_segments), 0.0, q_bar)


def max_production(net: Network, c_lo: float, c_hi: float) -> np.ndarray:
    """Largest nodal production reachable with multipliers in ``[c_lo, c_hi]``.

    Attained when the node prices at ``c_lo`` and all neighbours at ``c_hi``.
    """
    u = (c_hi - c_lo) / (c_hi + c_lo)
    per_arc = (u + 0.5 * u * u) / net.nbr_loss
    return net.demand + np.bincount(net.arc_src, per_arc, net.n)


def validate_instance(net: Network, costs: CostProfile) -> None:
    """Check that network and costs fit together (sizes and segment capacity)."""
    if costs.n != net.n:
        raise ValidationError(f"cost profile has {costs.n} agents, network has {net.n} nodes")
    cap = costs.n_segments * costs.q_bar
    top = max_production(net, costs.c_lo, costs.c_hi)
    bad = np.flatnonzero(top >= cap)
    if bad.size:
        i = int(bad[0])
        raise ValidationError(
            f"node {i}: production can reach {top[i]:.6g} >= N*q_bar={cap:.6g}; increase N or q_bar"
        )


def generate_costs(
    net: Network,
    n_segments: int = 1,
    seed: int | None = 0,
    c_range: tuple[float, float] = (1.0, 10.0),
    q_bar: float | None = None,
) -> CostProfile:
    """Random sorted slopes, uniform on ``c_range``.

    Without an explicit ``q_bar`` the segment width is chosen so that
    ``N * q_bar`` sits 5% above the largest reachable nodal production.
    """
    c_lo, c_hi = map(float, c_range)
    if not (0 < c_lo < c_hi):
        raise ParamError(f"c_range {c_range} must satisfy 0 < lo < hi")
    if n_segments < 1:
        raise ParamError("n_segments must be >= 1")
    rng = np.random.default_rng(seed)
    slopes = np.sort(rng.uniform(c_lo, c_hi, size=(net.n, n_segments)), axis=1)
    if q_bar is None:
        q_bar = 1.05 * float(max_production(net, c_lo, c_hi).max()) / n_segments
    costs = CostProfile(slopes, q_bar, c_lo, c_hi)
    validate_instance(net, costs)
    return costs


def instance_to_dict(net: Network, costs: CostProfile) -> dict:
    return {
        "n": net.n,
        "demand": net.demand.tolist(),
        "edges": [
            {"a": int(a), "b": int(b), "r": float(r)}
            for (a, b), r in zip(net.edges, net.loss)
        ],
        "q_bar": float(costs.q_bar),
        "N": costs.n_segments,
        "slopes": costs.slopes.tolist(),
        "c_lo": float(costs.c_lo),
        "c_hi": float(costs.c_hi),
    }


def instance_from_dict(data: dict) -> tuple[Network, CostProfile]:
    try:
        net = build_network(
            int(data["n"]),
            data["demand"],
            [(e["a"], e["b"], e["r"]) for e in data["edges"]],
        )
        slopes = np.asarray(data["slopes"], dtype=np.float64)
        if slopes.ndim != 2 or slopes.shape[1] != int(data["N"]):
            raise ValidationError(f"slopes shape {slopes.shape} does not match N={data['N']}")
        costs = CostProfile(slopes, float(data["q_bar"]), float(data["c_lo"]), float(data["c_hi"]))
    except KeyError as exc:
        raise ValidationError(f"instance is missing field {exc}") from None
    validate_instance(net, costs)
    return net, costs


def load_instance(path: str | Path) -> tuple[Network, CostProfile]:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def dump_instance(path: str | Path, net: Network, costs: CostProfile) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, json.dumps(instance_to_dict(net, costs), indent=1))
