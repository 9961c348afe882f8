import numpy as np
import pytest

from _support import presheaf_truth, response_for
from diractree.forward_time import TimeGrid, extract_response
from diractree.topology import (
    ECHO_SCALE,
    PreSheaf,
    TopologyError,
    choose_sheaf,
    degree_from_amplitude,
    extract_length_and_degree,
    read_topology,
)
from diractree.tree import generate_instance, single_edge, star


@pytest.mark.parametrize("n", [3, 4, 5, 8])
def test_degree_from_echo(n):
    assert degree_from_amplitude(ECHO_SCALE * 1j * (n - 2) / n) == n


def test_dirichlet_echo_is_terminal():
    assert degree_from_amplitude(2j) == 1
    with pytest.raises(TopologyError):
        degree_from_amplitude(0.9j)  # n = 2.45: not an integer
    with pytest.raises(TopologyError):
        degree_from_amplitude(2.5j)


def test_length_from_first_echo():
    r = extract_length_and_degree([(0.0, 1j), (1.4, 1j), (2.8, 0.3j)])
    assert r.length == pytest.approx(0.7) and r.degree == 4
    with pytest.raises(TopologyError, match="no echo"):
        extract_length_and_degree([])


def test_single_edge_reading():
    R = extract_response(single_edge(0.8), {}, TimeGrid(0.01, 2.0))
    topo = read_topology(R)
    assert topo.sheaf is None and topo.readings[0].terminal
    assert topo.readings[0].length == pytest.approx(0.8)


def test_star_is_one_sheaf():
    R = extract_response(star([0.5, 0.7, 0.6], 0.4), {}, TimeGrid(0.01, 4.0))
    topo = read_topology(R)
    assert [P.members for P in topo.presheaves] == [(0, 1, 2)]
    assert topo.presheaves[0].degree == 4 and topo.sheaf == 0


@pytest.mark.parametrize("seed", range(1, 11))
def test_partition_and_distances_match_truth(seed):
    tree, pots = generate_instance(seed, 8)
    R = response_for(tree, pots)
    topo = read_topology(R)
    groups, dist = presheaf_truth(tree)
    by_members = {tuple(v): c for c, v in groups.items()}
    assert sorted(P.members for P in topo.presheaves) == sorted(by_members)
    for k, v in enumerate(tree.boundary):
        e = tree.leaf_edge(v)
        assert abs(topo.readings[k].length - e.length) <= R.tau
    centres = [by_members[P.members] for P in topo.presheaves]
    for a, ca in enumerate(centres):
        assert topo.presheaves[a].degree == tree.degree(ca)
        for b, cb in enumerate(centres):
            assert abs(topo.distances[a, b] - dist[ca, cb]) <= 2 * R.tau
    assert topo.presheaves[topo.sheaf].is_sheaf


def test_choose_sheaf_skips_non_sheaves():
    ps = [PreSheaf((0,), 3, (1.0,)), PreSheaf((1, 2), 3, (1.0, 1.0)), PreSheaf((3, 4), 3, (1.0, 1.0))]
    D = np.array([[0, 2.0, 2.0], [2.0, 0, 1.0], [2.0, 1.0, 0]])
    # (0) is at maximal distance but its vertex has two inner edges
    assert choose_sheaf(ps, D) == 1
    with pytest.raises(TopologyError):
        choose_sheaf(ps[:1] + [PreSheaf((1,), 3, (1.0,))], np.array([[0, 1.0], [1.0, 0]]))
