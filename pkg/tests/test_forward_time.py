import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diractree.forward_time import (
    CommensurabilityError,
    ResponseMatrix,
    SpikeDetector,
    TimeGrid,
    apply_response,
    cells,
    evolve,
    extract_response,
    ray_trace_singular,
    vertex_scatter,
)
from diractree.tree import generate_instance, path_distance, single_edge, star


def test_vertex_scatter_three_edges():
    np.testing.assert_allclose(vertex_scatter(np.array([1.0, 0.0, 0.0])), [-1 / 3, 2 / 3, 2 / 3])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.integers(0, 6))
def test_vertex_scatter_is_unitary_and_keeps_continuity(n, k):
    P = np.array([vertex_scatter(np.eye(n)[j]) for j in range(n)]).T
    np.testing.assert_allclose(P @ P.T, np.eye(n), atol=1e-12)
    inc = np.eye(n)[k % n]
    out = vertex_scatter(inc)
    u1 = (inc + out) / 2
    np.testing.assert_allclose(u1, u1[0])
    assert abs(np.sum(out - inc)) < 1e-12  # zero sum of second components


def test_commensurability_enforced():
    assert cells(0.3, 0.01) == 30
    with pytest.raises(CommensurabilityError):
        cells(0.305, 0.01)


def test_single_edge_dirichlet_echo():
    R = extract_response(single_edge(1.0), {}, TimeGrid(0.01, 3.0))
    assert len(R.spikes[0][0]) == 1
    t0, a0 = R.spikes[0][0][0]
    assert t0 == pytest.approx(2.0) and a0 == pytest.approx(2j)
    assert R.leading == 1j
    assert np.max(np.abs(R.regular)) < 1e-12


def test_three_star_echo_and_transmission():
    R = extract_response(star([1.0, 1.5, 2.0]), {}, TimeGrid(0.01, 4.0))
    t, a = R.spikes[0][0][0]
    assert t == pytest.approx(2.0) and a == pytest.approx(2j / 3)
    t, a = R.spikes[0][1][0]
    assert t == pytest.approx(2.5) and a == pytest.approx(-4j / 3)
    assert R.spikes[1][0] == R.spikes[0][1]


def test_ray_tracing_agrees_with_scheme():
    tree = star([0.4, 0.7, 0.5])
    R = extract_response(tree, {}, TimeGrid(0.01, 3.0), cross_check=False)
    rays = ray_trace_singular(tree, "b1", 3.0, 0.01)
    got = dict(R.spikes[0][0])
    for t, amp in rays["b1"]:
        if t > 0:
            k = min(got, key=lambda s: abs(s - t))
            assert abs(k - t) < 1e-9 and abs(got[k] - amp) < 1e-9


def test_zero_control_gives_zero_output():
    tree, pots = generate_instance(2, 6)
    grid = TimeGrid(0.01, 1.0)
    ev = evolve(tree, pots, np.zeros((grid.steps + 1, len(tree.boundary))), grid)
    assert np.all(ev.outputs == 0)


def test_finite_speed_of_propagation():
    tree, pots = generate_instance(5, 8)
    grid = TimeGrid(0.01, 2 * tree.total_length)
    R = extract_response(tree, pots, grid)
    for i, a in enumerate(tree.boundary):
        for j, b in enumerate(tree.boundary):
            if i == j:
                continue
            n0 = int(round(path_distance(tree, a, b) / grid.tau))
            assert np.max(np.abs(R.impulse(i, j)[: n0 - 1])) < 1e-13


def test_apply_response_reproduces_evolution():
    tree, pots = generate_instance(4, 6)
    grid = TimeGrid(0.01, 1.5)
    R = extract_response(tree, pots, grid)
    rng = np.random.default_rng(0)
    f = rng.normal(size=(grid.steps + 1, len(tree.boundary)))
    f[0] = 0
    f = np.cumsum(f, axis=0) * 0.1
    direct = evolve(tree, pots, f, grid).outputs
    np.testing.assert_allclose(apply_response(R, f), direct, atol=1e-10)


def test_reciprocity_of_response():
    tree, pots = generate_instance(6, 8)
    R = extract_response(tree, pots, TimeGrid(0.01, 1.5))
    h = R.impulse()
    np.testing.assert_allclose(h, np.swapaxes(h, 0, 1), atol=1e-12)


def test_spike_detector_separates_spike_from_smooth():
    tau = 0.01
    t = tau * np.arange(200)
    seq = tau * np.sin(t) + 0j
    seq[120] += 0.5
    idx, amps = SpikeDetector().split(seq, tau)
    assert list(idx) == [120]
    assert amps[0] == pytest.approx(0.5, abs=1e-5)


def test_response_matrix_from_impulse_round_trip():
    tree, pots = generate_instance(9, 6)
    R = extract_response(tree, pots, TimeGrid(0.01, 1.2))
    R2 = ResponseMatrix.from_impulse(R.impulse(), R.tau, R.labels)
    np.testing.assert_allclose(R2.impulse(), R.impulse(), atol=1e-14)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_star_echo_is_twice_the_vertex_reflection(n):
    # outgoing wave 2g, reflection 2/n - 1, read through u2 = i(g - in)
    R = extract_response(star([0.5] * (n - 1), 0.7), {}, TimeGrid(0.01, 1.2))
    t, a = R.spikes[0][0][0]
    assert t == pytest.approx(1.0)
    assert abs(a - 2j * (n - 2) / n) < 1e-12
