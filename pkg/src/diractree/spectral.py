"""Stationary Dirac problem ``J psi' + V psi = lambda psi`` and the TW matrix.

Transfer matrices are integrated with the two-point Gauss Magnus scheme
(fourth order).  Each step is the exponential of a trace-free 2x2 matrix, so
``det T = 1`` holds to rounding.  ``psi2`` at a boundary vertex is taken in
the edge coordinate pointing into the tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from diractree.tree import EdgePotential, MetricTree

J = np.array([[0.0, 1.0], [-1.0, 0.0]])
_G = np.sqrt(3.0) / 6.0

# Im(xi^* M xi) < 0 for Im(lambda) > 0 in this convention (cot(lambda l) at lambda = i y is -i coth y)
NEVANLINNA_SIGN = -1


class StepTooLargeError(ValueError):
    pass


class SpectralPointError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=complex))
        if len(np.unique(pts)) != pts.size:
            raise ValueError("spectral points must be distinct")
        object.__setattr__(self, "points", pts)

    @classmethod
    def line(cls, count: int = 256, re_range: tuple[float, float] = (-40.0, 40.0), eps: float = 1.0):
        return cls(np.linspace(re_range[0], re_range[1], count) + 1j * eps)

    @property
    def eps(self) -> float:
        return float(np.min(self.points.imag))

    def __len__(self):
        return self.points.size


@dataclass(eq=False)
class TWSamples:
    grid: SpectralGrid
    M: np.ndarray  # (n_lambda, m, m)
    labels: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=complex)
        self.labels = tuple(self.labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.M - np.swapaxes(self.M, 1, 2)), initial=0.0))


def _generator(lam: np.ndarray, p: float, q: float) -> np.ndarray:
    # A = -J (lambda - V)
    V = np.array([[p, q], [q, -p]])
    A = -lam[:, None, None] * J[None] + (J @ V)[None]
    return A


def _expm_tracefree(O: np.ndarray) -> np.ndarray:
    s = np.sqrt(-(O[:, 0, 0] * O[:, 1, 1] - O[:, 0, 1] * O[:, 1, 0]) + 0j)
    small = np.abs(s) < 1e-8
    s_safe = np.where(small, 1.0, s)
    ch = np.where(small, 1.0 + s**2 / 2, np.cosh(s_safe))
    sh = np.where(small, 1.0 + s**2 / 6, np.sinh(s_safe) / s_safe)
    return ch[:, None, None] * np.eye(2)[None] + sh[:, None, None] * O


def edge_transfer(
    potential: EdgePotential | None,
    lam,
    length: float | None = None,
    h: float | None = None,
    refine: bool = False,
) -> np.ndarray:
    """Transfer matrices ``psi(l) = T psi(0)`` for each ``lam`` (shape ``(n, 2, 2)``).

    ``potential=None`` means ``V = 0`` on an edge of the given ``length``.
    Raises unless ``|lambda| h <= 0.5``; ``refine=True`` subdivides instead.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    if potential is not None:
        length = potential.length
        h = potential.h if h is None else h
    if length is None:
        raise ValueError("length required for a potential-free edge")
    if h is None:
        h = min(0.01, length)
    n = max(1, int(round(length / h)))
    step = length / n
    lam_max = float(np.max(np.abs(lam), initial=0.0))
    if lam_max * step > 0.5:
        if not refine:
            raise StepTooLargeError(
                f"|lambda| h = {lam_max * step:.3g} > 0.5; refine the edge grid or pass refine=True"
            )
        n = int(np.ceil(length * lam_max / 0.5))
        step = length / n
    out = np.broadcast_to(np.eye(2, dtype=complex), (lam.size, 2, 2)).copy()
    if potential is None:
        # constant coefficients: one exact exponential
        return _expm_tracefree(_generator(lam, 0.0, 0.0) * length)
    xs = step * np.arange(n)
    x1 = xs + (0.5 - _G) * step
    x2 = xs + (0.5 + _G) * step
    p1, q1 = potential.at(x1)
    p2, q2 = potential.at(x2)
    c = np.sqrt(3.0) / 12.0 * step**2
    for k in range(n):
        A1 = _generator(lam, p1[k], q1[k])
        A2 = _generator(lam, p2[k], q2[k])
        O = 0.5 * step * (A1 + A2) + c * (A2 @ A1 - A1 @ A2)
        out = _expm_tracefree(O) @ out
    return out


def solve_cauchy(
    potential: EdgePotential | None,
    lam,
    endpoint: str,
    data,
    length: float | None = None,
    refine: bool = False,
) -> np.ndarray:
    """Carry ``(psi1, psi2)`` given at ``endpoint`` ('start' or 'end') across the edge.

    ``data`` has shape ``(2,)`` or ``(n_lambda, 2)``; the result matches.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    T = edge_transfer(potential, lam, length=length, refine=refine)
    if endpoint == "end":
        # det T = 1: inverse is the adjugate
        T = np.stack(
            [np.stack([T[:, 1, 1], -T[:, 0, 1]], -1), np.stack([-T[:, 1, 0], T[:, 0, 0]], -1)], -2
        )
    elif endpoint != "start":
        raise ValueError("endpoint must be 'start' or 'end'")
    d = np.asarray(data, dtype=complex)
    single = d.ndim == 1
    d = np.broadcast_to(d, (lam.size, 2))
    out = np.einsum("nij,nj->ni", T, d)
    return out[0] if single and lam.size == 1 else out


def tw_matrix(
    tree: MetricTree,
    potentials: Mapping[str, EdgePotential],
    lam,
    refine: bool = True,
    cond_limit: float = 1e12,
) -> np.ndarray:
    """TW matrices ``M[k, j, i]``: ``psi2`` at boundary ``j`` for ``psi1 = e_i``.

    Unknowns are ``psi(0)`` on every edge; ``psi(l) = T psi(0)``.  Rows impose
    continuity of ``psi1`` and zero sum of outward ``psi2`` at internal
    vertices, ``psi1 = 0`` at the clamped vertex and the boundary data.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    nl = lam.size
    edges = list(tree.edges)
    E = len(edges)
    col = {e.id: 2 * k for k, e in enumerate(edges)}
    Ts = {}
    for e in edges:
        pot = potentials.get(e.id)
        Ts[e.id] = edge_transfer(pot, lam, length=e.length, refine=refine)

    # endpoint value rows: psi at endpoint = Q @ unknowns
    def endpoint_rows(e, at_end):
        rows = np.zeros((nl, 2, 2 * E), dtype=complex)
        c = col[e.id]
        if at_end:
            rows[:, :, c : c + 2] = Ts[e.id]
        else:
            rows[:, :, c : c + 2] = np.eye(2)
        return rows

    m = len(tree.boundary)
    bpos = {v: i for i, v in enumerate(tree.boundary)}
    A = np.zeros((nl, 2 * E, 2 * E), dtype=complex)
    rhs = np.zeros((nl, 2 * E, m), dtype=complex)
    out_rows = np.zeros((nl, m, 2 * E), dtype=complex)
    r = 0
    for v in tree.vertices:
        inc = [(e, e.end == v) for e in tree.incident(v)]
        vals = [endpoint_rows(e, at_end) for e, at_end in inc]
        sign = [-1.0 if at_end else 1.0 for _, at_end in inc]
        if len(inc) == 1:
            A[:, r] = vals[0][:, 0]
            if v in bpos:
                rhs[:, r, bpos[v]] = 1.0
                out_rows[:, bpos[v]] = sign[0] * vals[0][:, 1]
            r += 1
            continue
        for k in range(1, len(inc)):
            A[:, r] = vals[k][:, 0] - vals[0][:, 0]
            r += 1
        A[:, r] = sum(s * vv[:, 1] for s, vv in zip(sign, vals))
        r += 1
    if r != 2 * E:
        raise ValueError("tree is not a tree: equation count mismatch")
    cond = np.linalg.cond(A)
    if np.any(~np.isfinite(cond)) or np.any(cond > cond_limit):
        bad = lam[~np.isfinite(cond) | (cond > cond_limit)]
        raise SpectralPointError(f"spectral point {bad[0]:.6g}; increase Im lambda")
    sol = np.linalg.solve(A, rhs)
    return out_rows @ sol


def tw_samples(tree: MetricTree, potentials: Mapping[str, EdgePotential], grid: SpectralGrid) -> TWSamples:
    return TWSamples(grid, tw_matrix(tree, potentials, grid.points), tree.boundary)


def nevanlinna_form(M: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``Im(xi^* M xi)`` for each sample."""
    xi = np.asarray(xi, dtype=complex)
    return np.einsum("i,nij,j->n", xi.conj(), M, xi).imag
