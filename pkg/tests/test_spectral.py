import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from diractree.spectral import (
    J,
    NEVANLINNA_SIGN,
    SpectralGrid,
    StepTooLargeError,
    edge_transfer,
    nevanlinna_form,
    solve_cauchy,
    tw_matrix,
    tw_samples,
)
from diractree.tree import EdgePotential, generate_instance, single_edge, star


def test_free_edge_is_a_rotation():
    lam = np.array([0.7, 2.0 + 1j])
    T = edge_transfer(None, lam, length=1.3)
    c, s = np.cos(1.3 * lam), np.sin(1.3 * lam)
    np.testing.assert_allclose(T[:, 0, 0], c)
    np.testing.assert_allclose(T[:, 0, 1], -s)
    np.testing.assert_allclose(T[:, 1, 0], s)


def test_constant_potential_matches_matrix_exponential():
    p, q, L = 0.4, -0.3, 0.8
    pot = EdgePotential("e", 0.01, np.full(81, p), np.full(81, q))
    lam = np.array([1.5 + 1j, -3.0 + 0.5j])
    V = np.array([[p, q], [q, -p]])
    for k, mu in enumerate(lam):
        ref = expm(-J @ (mu * np.eye(2) - V) * L)
        np.testing.assert_allclose(edge_transfer(pot, lam)[k], ref, atol=1e-12)


def test_magnus_is_fourth_order():
    P = lambda x: 0.4 * np.sin(3 * x)
    Q = lambda x: 0.3 * np.cos(2 * x) + 0.1
    lam = np.array([4.0 + 1j])
    ref = edge_transfer(EdgePotential.from_functions("e", 1.0, 1 / 640, P, Q), lam)
    errs = [
        np.max(np.abs(edge_transfer(EdgePotential.from_functions("e", 1.0, h, P, Q), lam) - ref))
        for h in (1 / 20, 1 / 40)
    ]
    assert 10 < errs[0] / errs[1] < 24


def test_step_guard_and_refinement():
    pot = EdgePotential("e", 0.1, np.zeros(11), np.zeros(11))
    with pytest.raises(StepTooLargeError):
        edge_transfer(pot, [20.0])
    T = edge_transfer(pot, [20.0 + 1j], refine=True)
    np.testing.assert_allclose(T, edge_transfer(None, [20.0 + 1j], length=1.0), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-30, 30), st.floats(0.1, 3))
def test_transfer_determinant_is_one(seed, re, im):
    _, pots = generate_instance(seed, 1)
    T = edge_transfer(pots["e1"], [re + 1j * im], refine=True)
    assert abs(np.linalg.det(T[0]) - 1) < 1e-8


def test_cauchy_forward_then_back():
    _, pots = generate_instance(11, 1)
    pot = pots["e1"]
    lam = np.array([2.0 + 1j, -5.0 + 1j])
    d0 = np.array([[1.0, 0.2j], [0.3, -1.0]])
    d1 = solve_cauchy(pot, lam, "start", d0)
    np.testing.assert_allclose(solve_cauchy(pot, lam, "end", d1), d0, atol=1e-12)
    with pytest.raises(ValueError):
        solve_cauchy(pot, lam, "middle", d0)


def test_single_edge_cotangent():
    lam = np.linspace(-10, 10, 7) + 1j
    M = tw_matrix(single_edge(1.3), {}, lam)[:, 0, 0]
    np.testing.assert_allclose(M, np.cos(1.3 * lam) / np.sin(1.3 * lam), atol=1e-12)


def test_star_closed_form():
    # V = 0, coordinates from the leaves: psi2(0) = (a cos - u) / sin on each
    # edge, u = psi1 at the centre fixed by the zero sum of psi2 there
    l1, l2, l0 = 1.0, 1.5, 2.0
    lam = np.linspace(-6, 6, 9) + 1j
    M = tw_matrix(star([l1, l2], l0), {}, lam)
    c1, s1 = np.cos(lam * l1), np.sin(lam * l1)
    c2, s2 = np.cos(lam * l2), np.sin(lam * l2)
    c0, s0 = np.cos(lam * l0), np.sin(lam * l0)
    u = (1 / s1) / (c1 / s1 + c2 / s2 + c0 / s0)
    np.testing.assert_allclose(M[:, 0, 0], (c1 - u) / s1, atol=1e-12)
    np.testing.assert_allclose(M[:, 1, 0], -u / s2, atol=1e-12)
    np.testing.assert_allclose(M[:, 0, 1], M[:, 1, 0], atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_tw_symmetric_and_nevanlinna(seed):
    tree, pots = generate_instance(seed, 8)
    tw = tw_samples(tree, pots, SpectralGrid.line(24, (-15, 15), 0.7))
    assert tw.symmetry_defect() < 1e-10
    rng = np.random.default_rng(seed)
    xi = rng.normal(size=tw.size) + 1j * rng.normal(size=tw.size)
    assert np.all(NEVANLINNA_SIGN * nevanlinna_form(tw.M, xi) > 0)


def test_potential_changes_tw():
    tree, pots = generate_instance(2, 5)
    lam = np.array([3.0 + 1j])
    assert np.max(np.abs(tw_matrix(tree, pots, lam) - tw_matrix(tree, {}, lam))) > 1e-3
