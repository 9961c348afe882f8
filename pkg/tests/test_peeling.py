import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import cut_sheaf, response_for, true_sheaves
from diractree.forward_time import TimeGrid, evolve, extract_response
from diractree.peeling import (
    ReconstructConfig,
    causal_convolve,
    causal_deconvolve,
    compare_reconstruction,
    march_edge,
    peel_response,
    peel_sheaf,
    reconstruct,
)
from diractree.spectral import SpectralGrid, tw_matrix, tw_samples
from diractree.tree import EdgePotential, generate_instance, single_edge, star

TAU = 0.01


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10_000))
def test_deconvolution_inverts_convolution(n, seed):
    rng = np.random.default_rng(seed)
    g = np.concatenate([np.zeros(3), 1 + rng.random(n + 5)]).astype(complex)
    h = rng.normal(size=n) + 1j * rng.normal(size=n)
    y = np.concatenate([np.zeros(3), causal_convolve(h, g[3:], n)])
    np.testing.assert_allclose(causal_deconvolve(y, g, 3, n), h, atol=1e-9)


def test_march_matches_evolution():
    # star edges start at their boundary leaves: the field at the far node is u at the centre
    tree = star([0.4, 0.6, 0.5])
    _, pots = generate_instance(1, 1)
    p = pots["e1"]
    pot = EdgePotential("e1", TAU, p.p[:41], p.q[:41])
    grid = TimeGrid(TAU, 1.5)
    g = np.zeros((grid.steps + 1, 2))
    g[:, 0] = np.sin(np.arange(grid.steps + 1) * 0.05)
    ev = evolve(tree, {"e1": pot}, g, grid, keep_fields=True)
    u1, u2 = march_edge(pot, 40, TAU, g[:, 0], ev.outputs[:, 0])
    far1 = np.array([f["e1"][0][-1] for f in ev.fields])
    far2 = np.array([f["e1"][1][-1] for f in ev.fields])
    np.testing.assert_allclose(u1, far1[: u1.size], atol=1e-12)
    np.testing.assert_allclose(u2, far2[: u2.size], atol=1e-12)


@pytest.mark.parametrize("seed", [1, 4, 7])
def test_discrete_peel_matches_simulated_reduced_tree(seed):
    tree, pots = generate_instance(seed, 8)
    R = response_for(tree, pots, TAU)
    v0, members = true_sheaves(tree)[0]
    red_tree, red_pots, mp, lengths = cut_sheaf(tree, pots, v0, members)
    cells = [int(round(l / TAU)) for l in lengths]
    red = peel_response(R.impulse(), TAU, R.labels, members, mp, cells, v0)
    assert red.labels == red_tree.boundary
    assert red.residual < 1e-10 and red.symmetry < 1e-10 and red.echo_defect < 1e-10
    n = red.h.shape[2] - 1
    ref = extract_response(red_tree, red_pots, TimeGrid(TAU, n * TAU), cross_check=False).impulse()
    np.testing.assert_allclose(red.h, ref, atol=1e-10)


@pytest.mark.parametrize("seed", [2, 5, 9])
def test_spectral_peel_matches_reduced_tw(seed):
    tree, pots = generate_instance(seed, 8)
    tw = tw_samples(tree, pots, SpectralGrid.line(40, (-20, 20), 1.0))
    for v0, members in true_sheaves(tree):
        red_tree, red_pots, mp, lengths = cut_sheaf(tree, pots, v0, members)
        red = peel_sheaf(tw, members, mp, lengths, v0, consistency_tol=1e-6)
        assert red.kept.all() and red.residual <= 1e-6
        ref = tw_matrix(red_tree, red_pots, red.tw.grid.points)
        np.testing.assert_allclose(red.tw.M, ref, atol=1e-10)
        assert red.symmetry < 1e-10


def test_spectral_peel_zero_potential():
    tree = star([1.0, 1.5], 2.0)
    tw = tw_samples(tree, {}, SpectralGrid.line(30, (-8, 8), 1.0))
    red = peel_sheaf(tw, [0, 1], [None, None], [1.0, 1.5], "c")
    ref = tw_matrix(single_edge(2.0), {}, red.tw.grid.points)
    np.testing.assert_allclose(red.tw.M, ref, atol=1e-6)


def test_wrong_length_is_inconsistent():
    tree = star([1.0, 1.5], 2.0)
    tw = tw_samples(tree, {}, SpectralGrid.line(30, (-8, 8), 1.0))
    red = peel_sheaf(tw, [0, 1], [None, None], [1.0, 1.4], "c")
    assert red.residual > 1e-2


def test_reconstruct_single_edge():
    R = extract_response(single_edge(0.75), {}, TimeGrid(TAU, 1.8))
    rep = reconstruct(R)
    assert rep.ok, rep.error
    (e,) = rep.tree.edges
    assert e.length == pytest.approx(0.75)
    assert np.max(np.abs(rep.potentials[e.id].p)) < 1e-10


def test_reconstruct_three_star():
    tree = star([1.0, 1.5], 2.0)
    R = extract_response(tree, {}, TimeGrid(TAU, 2 * tree.total_length + 0.3))
    rep = reconstruct(R)
    assert rep.ok, rep.error
    m = compare_reconstruction(tree, {}, rep.tree, rep.potentials, TAU)
    assert m["isomorphic"] and m["lengths_within_tol"]
    for pot in rep.potentials.values():
        assert pot.sup() < 1e-8


def test_reconstruct_generated_and_idempotent():
    tree, pots = generate_instance(3, 8)
    rep = reconstruct(response_for(tree, pots, TAU))
    assert rep.ok, rep.error
    m = compare_reconstruction(tree, pots, rep.tree, rep.potentials, TAU)
    assert m["isomorphic"] and m["lengths_within_tol"] and m["max_potential_linf"] < 0.05
    # second pass on the recovered instance returns the same instance
    rep2 = reconstruct(response_for(rep.tree, rep.potentials, TAU))
    assert rep2.ok, rep2.error
    m2 = compare_reconstruction(rep.tree, rep.potentials, rep2.tree, rep2.potentials, 1e-9)
    assert m2["isomorphic"] and m2["max_length_error"] < 1e-9
    assert m2["max_potential_linf"] < 0.01


def test_short_horizon_reports_stage():
    tree, pots = generate_instance(3, 8)
    R = extract_response(tree, pots, TimeGrid(TAU, round(0.5 * tree.total_length, 2)))
    rep = reconstruct(R)
    assert not rep.ok and rep.error.startswith("[topology]")


def test_spectral_method_on_zero_potential_star():
    tree = star([0.5, 0.7], 0.6)
    R = extract_response(tree, {}, TimeGrid(TAU, 2 * tree.total_length + 0.3))
    rep = reconstruct(R, ReconstructConfig(method="spectral"))
    assert rep.ok, rep.error
    m = compare_reconstruction(tree, {}, rep.tree, rep.potentials, TAU)
    assert m["isomorphic"] and m["lengths_within_tol"]
