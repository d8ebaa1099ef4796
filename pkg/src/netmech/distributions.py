"""Truncated log-concave priors for cost slopes.

Each family is defined on ``[lo, hi]`` through the shifted coordinate
``y = x - lo`` and the width ``w = hi - lo``, so ``lo`` plays the role of
the origin of the standard parameterizations. The K-ratio ``K = F / f``
drives the virtual cost ``x + K(x)``; its value at the top of the
support is the gap the next segment's support must leave.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import DiscernabilityViolation, OutOfSupport, ParamError, ValidationError
from .market import CostProfile

__all__ = [
    "Marginal",
    "Uniform",
    "PowerFunction",
    "Weibull",
    "Laplace",
    "ReversedExponential",
    "PointMass",
    "AgentPrior",
    "DiscernabilityReport",
    "make_marginal",
    "k_ratio",
    "virtual_cost",
    "check_discernability",
    "prior_bounds",
    "sample_types",
    "sample_profile",
    "priors_to_dict",
    "priors_from_dict",
    "load_priors",
    "dump_priors",
]

_SUPPORT_SLACK = 1e-12


@dataclass(frozen=True)
class Marginal:
    """Base class: a density on ``[lo, hi]`` with closed-form pieces in ``y``.

    Subclasses implement ``_pdf``, ``_cdf``, ``_k`` and ``_ppf`` in the
    shifted coordinate. Public methods accept scalars or arrays of ``x``.
    """

    lo: float
    hi: float

    family = "marginal"

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.lo < self.hi:
            raise ParamError(f"{self.family}: need finite lo < hi, got [{self.lo}, {self.hi}]")
        if self.lo < 0:
            raise ParamError(f"{self.family}: costs must be nonnegative, lo={self.lo}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def _shift(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        slack = _SUPPORT_SLACK * max(1.0, abs(self.hi))
        if np.any(x < self.lo - slack) or np.any(x > self.hi + slack):
            raise OutOfSupport(f"{self.family}: value outside [{self.lo}, {self.hi}]")
        return np.clip(x - self.lo, 0.0, self.width)

    @staticmethod
    def _out(v):
        return float(v) if np.ndim(v) == 0 else v

    def pdf(self, x):
        return self._out(self._pdf(self._shift(x)))

    def cdf(self, x):
        return self._out(self._cdf(self._shift(x)))

    def k_ratio(self, x):
        """``F(x) / f(x)``, zero at ``lo``."""
        return self._out(self._k(self._shift(x)))

    def virtual_cost(self, x):
        return self._out(np.asarray(x, dtype=np.float64) + self._k(self._shift(x)))

    def ppf(self, u):
        u = np.asarray(u, dtype=np.float64)
        if np.any((u < 0) | (u > 1)):
            raise ValidationError("probabilities must lie in [0, 1]")
        return self._out(self.lo + np.clip(self._ppf(u), 0.0, self.width))

    def sample(self, rng: np.random.Generator, size=None):
        return self.ppf(rng.random(size))

    @property
    def delta(self) -> float:
        """Gap ``K(hi)`` required before the next segment's support."""
        return float(self._k(np.float64(self.width)))

    def to_dict(self) -> dict:
        out = {"family": self.family, "lo": self.lo, "hi": self.hi}
        if hasattr(self, "lam"):
            out["lambda"] = self.lam
        return out

    # numeric fallbacks
    def _k(self, y):
        y = np.asarray(y, dtype=np.float64)
        f = self._pdf(y)
        F = self._cdf(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(F > 0, F / f, 0.0)

    def _ppf(self, u):
        def one(p):
            if p <= 0:
                return 0.0
            if p >= 1:
                return self.width
            return optimize.bisect(lambda y: self._cdf(y) - p, 0.0, self.width, xtol=1e-12)

        return np.vectorize(one, otypes=[float])(u)


@dataclass(frozen=True)
class _Shaped(Marginal):
    lam: float = 1.0

    min_lam = 0.0

    def __post_init__(self):
        super().__post_init__()
        ok = self.lam >= self.min_lam if self.min_lam > 0 else self.lam > 0
        if not (np.isfinite(self.lam) and ok):
            bound = f">= {self.min_lam}" if self.min_lam > 0 else "> 0"
            raise ParamError(f"{self.family}: lambda={self.lam} must be {bound}")


@dataclass(frozen=True)
class Uniform(Marginal):
    family = "uniform"

    def _pdf(self, y):
        return np.full_like(y, 1.0 / self.width)

    def _cdf(self, y):
        return y / self.width

    def _k(self, y):
        return np.asarray(y, dtype=np.float64) * 1.0

    def _ppf(self, u):
        return u * self.width


@dataclass(frozen=True)
class PowerFunction(_Shaped):
    """Density proportional to ``y**(lam - 1)``; ``lam >= 1``."""

    family = "power"
    min_lam = 1.0

    def _pdf(self, y):
        w = self.width
        return self.lam / w * (y / w) ** (self.lam - 1)

    def _cdf(self, y):
        return (y / self.width) ** self.lam

    def _k(self, y):
        return np.asarray(y, dtype=np.float64) / self.lam

    def _ppf(self, u):
        return self.width * u ** (1.0 / self.lam)


@dataclass(frozen=True)
class Weibull(_Shaped):
    """Weibull with scale ``w`` truncated to ``[0, w]``; ``lam >= 1``."""

    family = "weibull"
    min_lam = 1.0

    @property
    def _mass(self) -> float:
        return -np.expm1(-1.0)

    def _pdf(self, y):
        w, a = self.width, self.lam
        t = (y / w) ** a
        return a / w * (y / w) ** (a - 1) * np.exp(-t) / self._mass

    def _cdf(self, y):
        return -np.expm1(-((y / self.width) ** self.lam)) / self._mass

    def _k(self, y):
        y = np.asarray(y, dtype=np.float64)
        w, a = self.width, self.lam
        s = y / w
        with np.errstate(divide="ignore", invalid="ignore"):
            k = w / a * s ** (1 - a) * np.expm1(s**a)
        return np.where(y > 0, k, 0.0)

    def _ppf(self, u):
        return self.width * (-np.log1p(-u * self._mass)) ** (1.0 / self.lam)


@dataclass(frozen=True)
class Laplace(_Shaped):
    """Laplace density centred on the middle of the support, truncated.

    No closed form is used for ``F`` or ``K``: both come from adaptive
    quadrature of the density, and the inverse CDF from bisection.
    """

    family = "laplace"

    def _raw(self, y):
        return np.exp(-self.lam * np.abs(y - 0.5 * self.width))

    @cached_property
    def _mass(self) -> float:
        return integrate.quad(self._raw, 0.0, self.width, points=[0.5 * self.width], epsabs=0, epsrel=1e-13)[0]

    def _pdf(self, y):
        return self._raw(y) / self._mass

    def _cdf(self, y):
        mid = 0.5 * self.width

        def one(t):
            if t <= 0:
                return 0.0
            pts = [mid] if t > mid else None
            return integrate.quad(self._raw, 0.0, t, points=pts, epsabs=0, epsrel=1e-13)[0]

        vals = np.vectorize(one, otypes=[float])(np.asarray(y, dtype=np.float64))
        return vals / self._mass


@dataclass(frozen=True)
class ReversedExponential(_Shaped):
    """Density proportional to ``exp(lam * y)``."""

    family = "reversed_exponential"

    def _pdf(self, y):
        return self.lam * np.exp(self.lam * y) / np.expm1(self.lam * self.width)

    def _cdf(self, y):
        return np.expm1(self.lam * y) / np.expm1(self.lam * self.width)

    def _k(self, y):
        return -np.expm1(-self.lam * np.asarray(y, dtype=np.float64)) / self.lam

    def _ppf(self, u):
        return np.log1p(u * np.expm1(self.lam * self.width)) / self.lam


@dataclass(frozen=True)
class PointMass(Marginal):
    """Degenerate prior: the slope is known, so there is no rent (``K = 0``)."""

    family = "point"

    def __post_init__(self):
        if not np.isfinite(self.lo) or self.lo != self.hi or self.lo < 0:
            raise ParamError(f"point mass needs lo == hi >= 0, got [{self.lo}, {self.hi}]")

    def _shift(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(np.abs(x - self.lo) > _SUPPORT_SLACK * max(1.0, abs(self.lo))):
            raise OutOfSupport(f"point mass at {self.lo}: got a different value")
        return np.zeros_like(x)

    def pdf(self, x):
        raise ValidationError("a point mass has no density")

    def _cdf(self, y):
        return np.ones_like(y)

    def _k(self, y):
        return np.zeros_like(np.asarray(y, dtype=np.float64))

    def _ppf(self, u):
        return np.zeros_like(u)


_FAMILIES = {
    cls.family: cls
    for cls in (Uniform, PowerFunction, Weibull, Laplace, ReversedExponential, PointMass)
}


def make_marginal(family: str, lo: float, hi: float, lam: float | None = None) -> Marginal:
    """Build a marginal by family name (``uniform``, ``power``, ``weibull``,
    ``laplace``, ``reversed_exponential`` or ``point``)."""
    key = family.lower()
    if key not in _FAMILIES:
        raise ParamError(f"unknown family {family!r}; choose from {sorted(_FAMILIES)}")
    cls = _FAMILIES[key]
    if issubclass(cls, _Shaped):
        if lam is None:
            raise ParamError(f"family {family!r} needs a lambda parameter")
        return cls(float(lo), float(hi), float(lam))
    return cls(float(lo), float(hi))


def k_ratio(m: Marginal, x):
    return m.k_ratio(x)


def virtual_cost(m: Marginal, x):
    return m.virtual_cost(x)


@dataclass(frozen=True)
class AgentPrior:
    """Independent marginals for one agent's slopes, lowest segment first."""

    marginals: tuple[Marginal, ...]

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if not self.marginals:
            raise ParamError("an agent prior needs at least one segment")

    @property
    def n_segments(self) -> int:
        return len(self.marginals)

    @property
    def lows(self) -> np.ndarray:
        return np.array([m.lo for m in self.marginals])

    @property
    def highs(self) -> np.ndarray:
        return np.array([m.hi for m in self.marginals])

    def virtualize(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        if c.shape[-1] != self.n_segments:
            raise ValidationError(f"expected {self.n_segments} slopes, got {c.shape[-1]}")
        return np.stack([m.virtual_cost(c[..., j]) for j, m in enumerate(self.marginals)], axis=-1)

    def k_ratios(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        return np.stack([np.asarray(m.k_ratio(c[..., j])) for j, m in enumerate(self.marginals)], axis=-1)


@dataclass
class DiscernabilityReport:
    """Per-junction margins ``lo[j+1] - (hi[j] + delta[j])``; negative fails."""

    deltas: np.ndarray
    margins: np.ndarray

    @property
    def ok(self) -> bool:
        return bool(np.all(self.margins >= 0))

    @property
    def violations(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.margins < 0)]


def check_discernability(p: AgentPrior) -> DiscernabilityReport:
    """Compare each gap between consecutive supports with the rent at the lower top.

    Junction ``j`` (0-based) sits between segments ``j`` and ``j + 1``.
    """
    deltas = np.array([m.delta for m in p.marginals])
    margins = p.lows[1:] - (p.highs[:-1] + deltas[:-1])
    return DiscernabilityReport(deltas=deltas, margins=margins)


def _require_discernable(priors: Sequence[AgentPrior]) -> None:
    if not priors:
        raise ParamError("no agent priors given")
    n_seg = priors[0].n_segments
    for i, p in enumerate(priors):
        if p.n_segments != n_seg:
            raise ValidationError(f"agent {i} has {p.n_segments} segments, agent 0 has {n_seg}")
        rep = check_discernability(p)
        if not rep.ok:
            j = rep.violations[0]
            raise DiscernabilityViolation(
                f"agent {i}, junction {j}: support gap short by {-rep.margins[j]:.6g}"
            )


def prior_bounds(priors: Sequence[AgentPrior]) -> tuple[float, float, float]:
    """``(c_lo, c_hi, max_delta)`` over all supports."""
    lo = min(float(p.lows.min()) for p in priors)
    hi = max(float(p.highs.max()) for p in priors)
    dmax = max(max(m.delta for m in p.marginals) for p in priors)
    return lo, hi, dmax


def sample_types(priors: Sequence[AgentPrior], seed: int, n_samples: int) -> np.ndarray:
    """Draw ``n_samples`` type profiles, shape ``(n_samples, n, N)``.

    Sample ``s`` uses its own stream ``default_rng((seed, s))``, so any
    subset of samples can be regenerated independently of the others.
    """
    _require_discernable(priors)
    n, n_seg = len(priors), priors[0].n_segments
    u = np.empty((n_samples, n, n_seg))
    for s in range(n_samples):
        u[s] = np.random.default_rng((seed, s)).random((n, n_seg))
    out = np.empty_like(u)
    for i, p in enumerate(priors):
        for j, m in enumerate(p.marginals):
            out[:, i, j] = m.ppf(u[:, i, j])
    return out


def sample_profile(
    priors: Sequence[AgentPrior],
    q_bar: float,
    seed: int,
    *,
    c_lo: float | None = None,
    c_hi: float | None = None,
) -> CostProfile:
    """One type profile drawn by inverse CDF, as a cost profile.

    Bounds default to the hull of all supports.
    """
    _require_discernable(priors)
    lo, hi, _ = prior_bounds(priors)
    slopes = sample_types(priors, seed, 1)[0]
    return CostProfile(slopes, q_bar, lo if c_lo is None else c_lo, hi if c_hi is None else c_hi)


def priors_to_dict(priors: Sequence[AgentPrior]) -> dict:
    return {"priors": [[m.to_dict() for m in p.marginals] for p in priors]}


def priors_from_dict(data) -> list[AgentPrior]:
    rows = data["priors"] if isinstance(data, dict) else data
    try:
        return [
            AgentPrior(tuple(make_marginal(s["family"], s["lo"], s["hi"], s.get("lambda")) for s in row))
            for row in rows
        ]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed prior entry: {exc}") from None


def load_priors(path: str | Path) -> list[AgentPrior]:
    with open(path) as fh:
        return priors_from_dict(json.load(fh))


def dump_priors(path: str | Path, priors: Sequence[AgentPrior]) -> None:
    from .io import write_json

    write_json(path, priors_to_dict(priors))
