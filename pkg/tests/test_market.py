import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netmech.errors import (
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
from netmech.market import (
    CostProfile,
    build_network,
    cost_eval,
    dump_instance,
    generate_ba_network,
    generate_costs,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    segment_split,
)


def test_two_node_network_valid():
    net = build_network(2, [0.3, 0.3], [(0, 1, 1.0)])
    lower, upper = net.feasibility_terms()
    np.testing.assert_allclose(lower, [-0.2, -0.2])
    np.testing.assert_allclose(upper, [1.8, 1.8])
    assert net.loss_between(1, 0) == 1.0


def test_feasibility_violation_names_node_and_value():
    with pytest.raises(FeasibilityViolation) as exc:
        build_network(2, [1.0, 0.3], [(0, 1, 1.0)])
    assert exc.value.node == 0
    assert exc.value.value == pytest.approx(0.5)


@pytest.mark.parametrize(
    "edges, err",
    [
        ([(1, 1, 1.0), (0, 1, 1.0)], SelfLoop),
        ([(0, 1, 0.0)], NonPositiveLoss),
        ([(0, 1, -1.0)], NonPositiveLoss),
        ([(0, 1, 1.0), (1, 0, 2.0)], DuplicateEdge),
        ([(0, 5, 1.0)], ValidationError),
    ],
)
def test_bad_edges(edges, err):
    with pytest.raises(err):
        build_network(2, [0.1, 0.1], edges)


def test_isolated_node():
    with pytest.raises(IsolatedNode):
        build_network(3, [0.1, 0.1, 0.1], [(0, 1, 1.0)])


def test_length_mismatch():
    with pytest.raises(ValidationError):
        build_network(3, [0.1, 0.1], [(0, 1, 1.0)])


def test_ba_edge_count_and_connectivity():
    net = generate_ba_network(5, 2, seed=7)
    # complete graph on 3 seed nodes plus 2 edges for each of 2 new nodes
    assert net.n_edges == 3 + 2 * 2
    seen, todo = {0}, [0]
    while todo:
        for j in net.neighbors(todo.pop()):
            if int(j) not in seen:
                seen.add(int(j))
                todo.append(int(j))
    assert len(seen) == 5


def test_ba_benchmark_scale_reproducible():
    a = generate_ba_network(100, 2, seed=1)
    b = generate_ba_network(100, 2, seed=1)
    assert a.n == 100
    np.testing.assert_array_equal(a.edges, b.edges)
    np.testing.assert_array_equal(a.loss, b.loss)
    np.testing.assert_array_equal(a.demand, b.demand)
    lower, upper = a.feasibility_terms()
    assert np.all(lower < 0) and np.all(upper > 0)


@pytest.mark.parametrize("seed", range(10))
def test_ba_always_revalidates(seed):
    net = generate_ba_network(100, 2, seed=seed)
    again = build_network(net.n, net.demand, [(a, b, r) for (a, b), r in zip(net.edges, net.loss)])
    assert again.n_edges == net.n_edges


def test_ba_param_errors():
    with pytest.raises(ParamError):
        generate_ba_network(2, 2)
    with pytest.raises(ParamError):
        generate_ba_network(5, 0)
    with pytest.raises(ParamError):
        generate_ba_network(5, 2, r_range=(-1.0, 1.0))


@pytest.mark.parametrize("q, expected", [(0.0, 0.0), (1.5, 2.0), (5.0, 3.0)])
def test_cost_eval_examples(q, expected):
    assert cost_eval([1.0, 2.0], 1.0, q) == pytest.approx(expected)


def test_cost_eval_negative():
    with pytest.raises(NegativeQuantity):
        cost_eval([1.0], 1.0, -0.1)


def test_segment_split_examples():
    np.testing.assert_allclose(segment_split(1.5, 1.0, 3), [1.0, 0.5, 0.0])
    np.testing.assert_allclose(segment_split(0.0, 1.0, 3), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(segment_split(3.0, 1.0, 3), [1.0, 1.0, 1.0])
    with pytest.raises(OutOfRange):
        segment_split(3.5, 1.0, 3)


@given(
    st.lists(st.floats(0.1, 10.0), min_size=1, max_size=5),
    st.floats(0.1, 3.0),
    st.floats(0.0, 1.0),
)
def test_cost_matches_split(slopes, q_bar, frac):
    slopes = sorted(slopes)
    q = frac * len(slopes) * q_bar
    split = segment_split(q, q_bar, len(slopes))
    assert split.sum() == pytest.approx(q, abs=1e-12)
    assert np.count_nonzero((split > 0) & (split < q_bar)) <= 1
    assert cost_eval(slopes, q_bar, q) == pytest.approx(float(np.dot(slopes, split)), rel=1e-12, abs=1e-12)


@given(st.lists(st.floats(0.1, 10.0), min_size=1, max_size=5), st.floats(0.1, 3.0))
def test_cost_monotone_convex(slopes, q_bar):
    slopes = sorted(slopes)
    grid = np.linspace(0, len(slopes) * q_bar, 301)
    vals = np.array([cost_eval(slopes, q_bar, q) for q in grid])
    d = np.diff(vals) / np.diff(grid)
    assert np.all(d >= -1e-9)
    assert np.all(np.diff(d) >= -1e-6)


def test_cost_profile_validation():
    with pytest.raises(ValidationError):
        CostProfile([[2.0, 1.0]], 1.0, 1.0, 2.0)
    with pytest.raises(ValidationError):
        CostProfile([[1.0, 3.0]], 1.0, 1.0, 2.0)
    with pytest.raises(ValidationError):
        CostProfile([[1.0]], 0.0, 1.0, 2.0)


def test_capacity_check():
    net = build_network(2, [0.3, 0.3], [(0, 1, 1.0)])
    with pytest.raises(ValidationError):
        instance_from_dict(
            {"n": 2, "demand": [0.3, 0.3], "edges": [{"a": 0, "b": 1, "r": 1.0}],
             "q_bar": 0.5, "N": 1, "slopes": [[1.0], [2.0]], "c_lo": 1.0, "c_hi": 2.0}
        )
    costs = generate_costs(net, 2, seed=3)
    assert costs.n_segments == 2


def test_instance_round_trip(tmp_path):
    net = generate_ba_network(30, 2, seed=4)
    costs = generate_costs(net, 3, seed=4)
    path = tmp_path / "inst.json"
    dump_instance(path, net, costs)
    net2, costs2 = load_instance(path)
    assert instance_to_dict(net2, costs2) == instance_to_dict(net, costs)


def test_missing_field():
    with pytest.raises(ValidationError):
        instance_from_dict({"n": 2})
