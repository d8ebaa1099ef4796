import numpy as np
import pytest
from hypothesis import settings

from netmech.distributions import AgentPrior, PowerFunction, ReversedExponential, Uniform, Weibull
from netmech.market import CostProfile, build_network, generate_ba_network, generate_costs, max_production

settings.register_profile("netmech", deadline=None, max_examples=60)
settings.load_profile("netmech")

BACKENDS = ["numba", "numpy"]


@pytest.fixture
def golden():
    net = build_network(2, [0.3, 0.3], [(0, 1, 1.0)])
    costs = CostProfile([[1.0], [2.0]], 10.0, 1.0, 2.0)
    return net, costs


def random_instance(seed, n_max=30, seg_max=4):
    """Small BA network with random sorted slopes."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, n_max + 1))
    m = 1 if n < 4 else int(rng.integers(1, 3))
    n_seg = int(rng.integers(1, seg_max + 1))
    net = generate_ba_network(n, m, seed=seed)
    costs = generate_costs(net, n_seg, seed=seed + 10_000)
    return net, costs


def random_instances(count, base=0, **kw):
    return [random_instance(base + k, **kw) for k in range(count)]


def mechanism_market(seed, n=5, n_seg=2):
    """BA network with mixed-family priors laid out to be discernable."""
    rng = np.random.default_rng(seed)
    net = generate_ba_network(n, 2 if n > 3 else 1, seed=seed)
    priors = []
    for i in range(n):
        marginals, lo = [], 1.0 + rng.uniform(0, 0.5)
        for j in range(n_seg):
            w = rng.uniform(0.5, 1.5)
            kind = rng.integers(0, 4)
            if kind == 0:
                m = Uniform(lo, lo + w)
            elif kind == 1:
                m = PowerFunction(lo, lo + w, float(rng.uniform(1, 4)))
            elif kind == 2:
                m = ReversedExponential(lo, lo + w, float(rng.uniform(0.5, 3)))
            else:
                m = Weibull(lo, lo + w, float(rng.uniform(1, 3)))
            marginals.append(m)
            lo = m.hi + m.delta + rng.uniform(0.05, 0.5)
        priors.append(AgentPrior(tuple(marginals)))
    lo = min(p.lows.min() for p in priors)
    hi = max(p.highs.max() for p in priors)
    dmax = max(max(m.delta for m in p.marginals) for p in priors)
    q_bar = 1.05 * float(max_production(net, lo, hi + dmax).max()) / n_seg
    return net, priors, q_bar


# criterion number -> (verdict, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = ("PASS" if ok else "FAIL", detail)
    print(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {verdict}  {detail}")
