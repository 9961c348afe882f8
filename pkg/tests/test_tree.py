import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diractree.tree import (
    Edge,
    EdgePotential,
    MetricTree,
    generate_instance,
    orient_edges,
    path_distance,
    single_edge,
    star,
    tree_equivalent,
    validate,
)


def test_star_is_valid():
    t = star([1.0, 1.5, 2.0])
    assert validate(t).ok
    assert t.boundary == ("b1", "b2")
    assert t.degree("c") == 3


@pytest.mark.parametrize(
    "tree, kind",
    [
        (MetricTree(("a", "b", "root"), (Edge("e1", "root", "a", 1.0), Edge("e2", "a", "b", 1.0)), ("b",), "root"), "internal-degree"),
        (MetricTree(("root", "b1"), (Edge("e1", "root", "b1", -1.0),), ("b1",), "root"), "length"),
        (MetricTree(("root", "b1", "x"), (Edge("e1", "root", "b1", 1.0),), ("b1",), "root"), "connectivity"),
        (MetricTree(("root", "b1"), (Edge("e1", "root", "zz", 1.0),), ("b1",), "root"), "unknown-vertex"),
        (MetricTree(("root", "b1"), (Edge("e1", "b1", "root", 1.0),), ("b1",), "root"), "clamped-orientation"),
        (MetricTree(("root", "b1"), (Edge("e1", "root", "b1", 1.0),), (), "root"), "boundary-set"),
    ],
)
def test_validate_flags_each_violation(tree, kind):
    rep = validate(tree)
    assert not rep.ok
    assert kind in rep.kinds()


def test_cycle_detected():
    edges = (
        Edge("e1", "root", "a", 1.0),
        Edge("e2", "a", "b", 1.0),
        Edge("e3", "b", "c", 1.0),
        Edge("e4", "c", "a", 1.0),
    )
    rep = validate(MetricTree(("root", "a", "b", "c"), edges, (), "root"))
    assert "acyclicity" in rep.kinds()


def test_orientation_alternates_by_depth():
    t = orient_edges(star([1.0, 1.0, 1.0]))
    assert validate(t).ok
    for e in t.edges:
        if e.id == "e0":
            assert e.start == "root"
        else:
            assert e.start == e.id.replace("e", "b")


def test_potential_reversal_and_sampling():
    pot = EdgePotential.from_functions("e", 1.0, 0.1, np.sin, np.cos)
    assert pot.x[-1] == pytest.approx(1.0)
    rev = pot.reversed()
    np.testing.assert_allclose(rev.p, pot.p[::-1])
    p, q = pot.at([0.25])
    assert p[0] == pytest.approx(np.sin(0.25), abs=1e-4)
    with pytest.raises(ValueError):
        EdgePotential("e", 0.1, [0.0, np.nan], [0.0, 0.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_generated_instances_satisfy_invariants(seed, max_edges):
    tree, pots = generate_instance(seed, max_edges)
    assert validate(tree).ok
    assert len(tree.edges) <= max_edges
    for e in tree.edges:
        n = e.length / 0.01
        assert abs(n - round(n)) < 1e-9
        assert pots[e.id].x[-1] == pytest.approx(e.length)
        assert pots[e.id].sup() <= 0.5 + 1e-12
    for v in tree.internal_vertices:
        assert tree.degree(v) >= 3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_path_distance_triangle_and_four_point(seed):
    tree, _ = generate_instance(seed, 8)
    vs = list(tree.boundary) + [tree.clamped]
    d = {(a, b): path_distance(tree, a, b) for a in vs for b in vs}
    for a in vs:
        assert d[a, a] == 0
        for b in vs:
            assert d[a, b] == pytest.approx(d[b, a])
            for c in vs:
                assert d[a, c] <= d[a, b] + d[b, c] + 1e-12
    # four-point condition: the two largest pair sums agree
    for a in vs:
        for b in vs:
            for c in vs:
                for e in vs:
                    s = sorted([d[a, b] + d[c, e], d[a, c] + d[b, e], d[a, e] + d[b, c]])
                    assert s[2] - s[1] < 1e-9


def test_tree_equivalent_ignores_names_but_not_lengths():
    t = star([1.0, 1.5, 2.0])
    renamed = MetricTree(
        ("root", "hub", "b1", "b2"),
        (Edge("x", "root", "hub", 2.0), Edge("y", "b1", "hub", 1.0), Edge("z", "b2", "hub", 1.5)),
        ("b1", "b2"),
        "root",
    )
    ok, mapping = tree_equivalent(t, renamed)
    assert ok and mapping["c"] == "hub"
    swapped = MetricTree(renamed.vertices, renamed.edges, ("b2", "b1"), "root")
    assert not tree_equivalent(t, swapped)[0]
    assert not tree_equivalent(single_edge(1.0), single_edge(1.1))[0]
