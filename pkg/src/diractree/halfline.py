"""Potential recovery on a half-line from the response function.

The response ``R f = i f + r * f`` on ``[0, 2T]`` determines ``V`` on
``[0, T]``.  The connecting operator ``C^T = 2 + c`` is assembled from ``r``,
the Gelfand-Levitan type equations

    c(t, s) / 2 + 2 k(t, s) + int_{T-xi}^{T} k(t, eta) c(eta, s) d eta = 0

are solved by Nystrom's method with trapezoid weights, and the corner value
``k(T - xi, T - xi)`` gives the potential at distance ``xi`` from the
boundary through ``w = -2 [[1, 1], [i, -i]] k``, whose first column
yields ``p`` and ``q``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_NU = np.array([[1.0, 1.0], [1j, -1j]])


class NotPositiveError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class ResponseFunction:
    """Samples ``r(n tau)``, ``n = 0..2N``; zero for negative times."""

    tau: float
    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=complex)
        if r.ndim != 1 or r.size < 3 or r.size % 2 == 0:
            raise ValueError("r needs an odd number (2N + 1) of samples")
        if not np.all(np.isfinite(r)):
            raise ValueError("non-finite response samples")
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return (self.r.size - 1) // 2

    @property
    def T(self) -> float:
        return self.n * self.tau

    def at_index(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k)
        inside = (k >= 0) & (k <= 2 * self.n)
        return np.where(inside, self.r[np.clip(k, 0, 2 * self.n)], 0.0)


@dataclass(frozen=True, eq=False)
class ConnectingKernel:
    """2x2 kernel blocks on the ``(N+1) x (N+1)`` grid of ``[0, T]^2``.

    Diagonal entries hold the mean of the two one-sided limits; the limits
    themselves are kept in ``diag_below`` (t > s) and ``diag_above``.
    """

    tau: float
    c: np.ndarray  # (2, 2, N+1, N+1)
    diag_below: np.ndarray  # (2, 2)
    diag_above: np.ndarray

    @property
    def n(self) -> int:
        return self.c.shape[2] - 1

    @property
    def T(self) -> float:
        return self.n * self.tau

    def block_matrix(self, lo: int = 0) -> np.ndarray:
        c = self.c[:, :, lo:, lo:]
        return np.block([[c[0, 0], c[0, 1]], [c[1, 0], c[1, 1]]])


def build_connecting_kernel(r: ResponseFunction) -> ConnectingKernel:
    n = r.n
    ts = np.arange(n + 1)
    I, J = np.meshgrid(ts, ts, indexing="ij")
    fwd = r.at_index(I - J)
    bwd = r.at_index(J - I)
    mirror = r.at_index(2 * n - I - J)
    c = np.empty((2, 2, n + 1, n + 1), dtype=complex)
    c[0, 0] = -1j * (fwd - np.conj(bwd))
    c[0, 1] = -1j * np.conj(mirror)
    c[1, 0] = 1j * mirror
    c[1, 1] = 1j * (np.conj(fwd) - bwd)
    r0 = r.r[0]
    below = np.array([[-1j * r0, 0], [0, 1j * np.conj(r0)]])
    above = np.array([[1j * np.conj(r0), 0], [0, -1j * r0]])
    d = np.arange(n + 1)
    for a in range(2):
        c[a, a, d, d] = 0.5 * (below[a, a] + above[a, a])
    return ConnectingKernel(r.tau, c, below, above)


def _weights(m: int, tau: float) -> np.ndarray:
    if m == 1:
        return np.zeros(1)
    w = np.full(m, tau)
    w[0] = w[-1] = tau / 2
    return w


def check_positive_definite(c: ConnectingKernel) -> float:
    """Smallest eigenvalue of the discretized ``a -> 2a + int c a``.

    Trapezoid weights are split symmetrically so the matrix is Hermitian.
    """
    w = _weights(c.n + 1, c.tau)
    sw = np.sqrt(np.concatenate([w, w]))
    C = c.block_matrix()
    A = 2 * np.eye(C.shape[0]) + sw[:, None] * C * sw[None, :]
    A = 0.5 * (A + A.conj().T)
    return float(np.linalg.eigvalsh(A)[0])


@dataclass(frozen=True, eq=False)
class GLSolution:
    xi: float
    lo: int  # first grid index of [T - xi, T]
    k: np.ndarray  # (2, 2, M, M)
    residual: float
    condition: float

    def corner(self) -> np.ndarray:
        return self.k[:, :, 0, 0]


def _system(c: ConnectingKernel, lo: int):
    C = c.block_matrix(lo)
    m = c.n + 1 - lo
    w = _weights(m, c.tau)
    W = np.concatenate([w, w])
    A = 2 * np.eye(2 * m) + W[:, None] * C
    return C, A, m


def solve_gl(c: ConnectingKernel, xi: float) -> GLSolution:
    """Nystrom solution of the equation on ``[T - xi, T]^2``."""
    if not (0 <= xi <= c.T + 1e-12):
        raise ValueError(f"xi={xi} outside [0, T]")
    lo = c.n - int(round(xi / c.tau))
    C, A, m = _system(c, lo)
    try:
        K = np.linalg.solve(A.T, (-0.5 * C).T).T
    except np.linalg.LinAlgError as exc:
        raise NotPositiveError("connecting operator not positive at this resolution") from exc
    res = np.linalg.norm(K @ A + 0.5 * C) / max(np.linalg.norm(C), 1e-300)
    if not np.isfinite(res):
        raise NotPositiveError("connecting operator not positive at this resolution")
    k = np.empty((2, 2, m, m), dtype=complex)
    for a in range(2):
        for b in range(2):
            k[a, b] = K[a * m : (a + 1) * m, b * m : (b + 1) * m]
    return GLSolution(xi, lo, k, float(res), float(np.linalg.cond(A)))


def _corner(c: ConnectingKernel, lo: int) -> np.ndarray:
    C, A, m = _system(c, lo)
    rows = [0, m]
    rhs = -0.5 * C[rows, :]
    try:
        K = np.linalg.solve(A.T, rhs.T).T
    except np.linalg.LinAlgError as exc:
        raise NotPositiveError("connecting operator not positive at this resolution") from exc
    return np.array([[K[0, 0], K[0, m]], [K[1, 0], K[1, m]]])


@dataclass(frozen=True, eq=False)
class RecoveredPotential:
    x: np.ndarray
    p: np.ndarray
    q: np.ndarray
    min_eigenvalue: float | None = None


def potential_from_corner(k: np.ndarray) -> tuple[float, float]:
    w = -2.0 * _NU @ k
    w1, w2 = w[0, 0], w[1, 0]
    return float(w1.imag + w2.real), float(-w1.real + w2.imag)


def recover_potential(
    r: ResponseFunction, x=None, check: bool = False
) -> RecoveredPotential:
    """``p`` and ``q`` at the grid points ``x`` of ``[0, T]`` (default: all).

    ``x`` is the distance from the boundary vertex, i.e. the coordinate in
    which the edge starts at the boundary.  Each ``x`` is an independent solve
    on ``[T - x, T]^2``.
    """
    c = build_connecting_kernel(r)
    n = c.n
    if x is None:
        idx = np.arange(n + 1)
    else:
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-12) or np.any(x > r.T + 1e-12):
            raise ValueError("evaluation points must lie in [0, T]")
        idx = np.rint(x / r.tau).astype(int)
    p = np.empty(idx.size)
    q = np.empty(idx.size)
    for k, i in enumerate(idx):
        p[k], q[k] = potential_from_corner(_corner(c, n - int(i)))
    lam = check_positive_definite(c) if check else None
    return RecoveredPotential(idx * r.tau, p, q, lam)
