"""Time-domain Dirac system on a tree and its boundary response.

The dynamic system ``i U_t + J U_x + V U = 0`` is written in the Riemann
invariants ``b = u1 - i u2`` (speed +1) and ``a = u1 + i u2`` (speed -1):

    b_t + b_x = w a,    a_t - a_x = -conj(w) b,    w = q + i p.

With the time step equal to the grid step both invariants move exactly one
node per step; the coupling inside each cell is applied as the exponential of
the constant (midpoint) off-diagonal block, which is unitary and second order.
Vertices couple invariants through the continuity/balance conditions; the
boundary carries Dirichlet data ``u1 = f`` and the clamped vertex ``u1 = 0``.

Boundary outputs are the second component in the coordinate pointing into the
tree, ``u2 = i (f - incoming)``.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from diractree.tree import EdgePotential, MetricTree


class CommensurabilityError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


class SpikeResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    horizon: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        n = self.horizon / self.tau
        if abs(n - round(n)) > 1e-6:
            raise CommensurabilityError(f"horizon {self.horizon} is not a multiple of tau {self.tau}")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.tau))

    @property
    def t(self) -> np.ndarray:
        return self.tau * np.arange(self.steps + 1)


def cells(length: float, tau: float) -> int:
    n = length / tau
    if abs(n - round(n)) > 1e-6 * max(1.0, n) or round(n) < 1:
        raise CommensurabilityError(f"edge length {length} is not a positive multiple of tau={tau}")
    return int(round(n))


def vertex_scatter(incoming) -> np.ndarray:
    """Outgoing amplitudes at a vertex joining ``n`` edges.

    Continuity of ``u1`` and zero sum of outward ``u2`` give
    ``out_k = (2/n) * sum(in) - in_k``.
    """
    incoming = np.asarray(incoming)
    n = incoming.shape[0]
    if n == 0:
        raise ValueError("vertex with no incident edges")
    return (2.0 / n) * incoming.sum(axis=0) - incoming


def dirichlet_reflect(incoming, control=0.0):
    """Outgoing invariant at a Dirichlet end ``u1 = control``."""
    return 2.0 * np.asarray(control) - np.asarray(incoming)


def cell_coupling(potential: EdgePotential | None, n: int, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell ``cos(|w| tau)`` and ``sin(|w| tau) w / |w|`` at the cell midpoints.

    One step of ``b_{k+1} = C b_k + S a_{k+1}``, ``a_k = C a_{k+1} - conj(S) b_k``
    is the exact flow of the coupling with ``w`` frozen on the cell.
    """
    if potential is None:
        return np.ones(n), np.zeros(n, dtype=complex)
    p, q = potential.at((np.arange(n) + 0.5) * tau)
    w = q + 1j * p
    mod = np.abs(w)
    with np.errstate(invalid="ignore", divide="ignore"):
        phase = np.where(mod > 0, w / np.where(mod > 0, mod, 1.0), 0.0)
    return np.cos(mod * tau), np.sin(mod * tau) * phase


class _Layout:
    """Flattened node storage and the linear vertex coupling of a tree."""

    def __init__(self, tree: MetricTree, potentials: Mapping[str, EdgePotential], tau: float):
        self.tree = tree
        self.tau = tau
        self.offset: dict[str, int] = {}
        self.ncell: dict[str, int] = {}
        left, C, S = [], [], []
        off = 0
        for e in tree.edges:
            n = cells(e.length, tau)
            self.offset[e.id] = off
            self.ncell[e.id] = n
            c, s = cell_coupling(potentials.get(e.id), n, tau)
            left.append(off + np.arange(n))
            C.append(c)
            S.append(s)
            off += n + 1
        self.nodes = off
        self.left = np.concatenate(left)
        self.right = self.left + 1
        self.C = np.concatenate(C)[:, None]
        self.S = np.concatenate(S)[:, None]

        # endpoints: incoming invariant is a at x=0 and b at x=l
        self.points: list[tuple[str, str, int]] = []
        for e in tree.edges:
            self.points.append((e.start, e.id, 0))
            self.points.append((e.end, e.id, 1))
        npts = len(self.points)
        self.pt_node = np.array(
            [self.offset[eid] + (self.ncell[eid] if side else 0) for (_, eid, side) in self.points]
        )
        self.pt_side = np.array([side for (_, _, side) in self.points])
        bpos = {v: i for i, v in enumerate(tree.boundary)}
        P = np.zeros((npts, npts))
        B = np.zeros((npts, len(tree.boundary)))
        by_vertex: dict[str, list[int]] = {}
        for k, (v, _, _) in enumerate(self.points):
            by_vertex.setdefault(v, []).append(k)
        self.boundary_pt = np.zeros(len(tree.boundary), dtype=int)
        for v, ks in by_vertex.items():
            if len(ks) == 1:
                k = ks[0]
                P[k, k] = -1.0
                if v in bpos:
                    B[k, bpos[v]] = 2.0
                    self.boundary_pt[bpos[v]] = k
                elif v != tree.clamped:
                    raise ValueError(f"leaf {v!r} is neither boundary nor clamped")
            else:
                n = len(ks)
                for i in ks:
                    for j in ks:
                        P[i, j] = 2.0 / n - (i == j)
        self.P = P
        self.B = B

    def gather_incoming(self, b, a):
        out = np.empty((len(self.points),) + b.shape[1:], dtype=complex)
        s0 = self.pt_side == 0
        out[s0] = a[self.pt_node[s0]]
        out[~s0] = b[self.pt_node[~s0]]
        return out

    def scatter_outgoing(self, b, a, outgoing):
        s0 = self.pt_side == 0
        b[self.pt_node[s0]] = outgoing[s0]
        a[self.pt_node[~s0]] = outgoing[~s0]


@dataclass
class Evolution:
    t: np.ndarray
    outputs: np.ndarray  # (steps+1, m, ...) boundary u2
    fields: list | None = None  # per time level: {edge: (u1, u2)}


def _as_controls(controls, steps: int, m: int) -> np.ndarray:
    g = np.asarray(controls, dtype=complex)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape[0] != steps + 1 or g.shape[1] != m:
        raise ValueError(f"controls must have shape ({steps + 1}, {m}, ...), got {g.shape}")
    return g


def evolve(
    tree: MetricTree,
    potentials: Mapping[str, EdgePotential],
    controls,
    grid: TimeGrid,
    keep_fields: bool = False,
) -> Evolution:
    """March the characteristic scheme from rest under Dirichlet controls.

    ``controls[n, j, ...]`` is ``u1`` at boundary vertex ``j`` at time
    ``n * tau``; trailing axes are independent experiments run together.
    """
    lay = _Layout(tree, potentials, grid.tau)
    m = len(tree.boundary)
    g = _as_controls(controls, grid.steps, m)
    extra = g.shape[2:]
    b = np.zeros((lay.nodes,) + extra, dtype=complex)
    a = np.zeros_like(b)
    C = lay.C.reshape((-1,) + (1,) * len(extra))
    S = lay.S.reshape((-1,) + (1,) * len(extra))
    Sc = np.conj(S)
    out = np.empty((grid.steps + 1, m) + extra, dtype=complex)
    fields = [] if keep_fields else None
    P = lay.P
    B = lay.B
    for n in range(grid.steps + 1):
        if n:
            bl = b[lay.left]
            ar = a[lay.right]
            b[lay.right] = C * bl + S * ar
            a[lay.left] = C * ar - Sc * bl
        inc = lay.gather_incoming(b, a)
        outgoing = np.tensordot(P, inc, axes=(1, 0)) + np.tensordot(B, g[n], axes=(1, 0))
        lay.scatter_outgoing(b, a, outgoing)
        out[n] = 1j * (g[n] - inc[lay.boundary_pt])
        if not np.all(np.isfinite(out[n])):
            raise SimulationError(f"non-finite values at step {n}")
        if keep_fields:
            snap = {}
            for e in tree.edges:
                o, k = lay.offset[e.id], lay.ncell[e.id]
                be, ae = b[o : o + k + 1], a[o : o + k + 1]
                snap[e.id] = ((ae + be) / 2, 1j * (be - ae) / 2)
            fields.append(snap)
    return Evolution(grid.t, out, fields)


# --- singular part by ray tracing ------------------------------------------


def ray_trace_singular(
    tree: MetricTree,
    source: str,
    horizon: float,
    tau: float | None = None,
    floor: float = 1e-12,
) -> dict[str, list[tuple[float, complex]]]:
    """Spikes generated at every boundary vertex by ``u1 = delta`` at ``source``.

    Broken characteristics are followed through the tree; an internal vertex
    of degree ``n`` transmits ``2/n`` and reflects ``(2-n)/n`` of the ``u1``
    amplitude, Dirichlet ends reflect ``-1``.  A wave of amplitude ``c``
    arriving at a boundary vertex records ``-2i c`` in the output.  Rays
    meeting at the same place and time are merged, so the cost stays linear
    in the horizon.  Times are exact multiples of ``tau`` when given.
    """
    if source not in tree.boundary:
        raise KeyError(f"{source!r} is not a boundary vertex")
    unit = tau if tau is not None else None

    def key(t):
        return int(round(t / unit)) if unit else round(t, 12)

    def to_time(k):
        return k * unit if unit else k

    out: dict[str, dict] = {v: {} for v in tree.boundary}
    # heap of (time key, target vertex, edge id)  ->  amplitude of u1 arriving
    pending: dict[tuple, complex] = {}
    heap: list[tuple] = []

    def push(tk, vertex, edge_id, amp):
        k = (tk, vertex, edge_id)
        if k not in pending:
            heapq.heappush(heap, k)
            pending[k] = 0j
        pending[k] += amp

    hk = key(horizon)
    e0 = tree.leaf_edge(source)
    push(key(e0.length), e0.other(source), e0.id, 1.0 + 0j)
    incident = {v: tree.incident(v) for v in tree.vertices}
    lengths = {e.id: key(e.length) for e in tree.edges}
    while heap:
        tk, v, eid = heapq.heappop(heap)
        c = pending.pop((tk, v, eid))
        if abs(c) < floor or tk > hk:
            continue
        inc = incident[v]
        n = len(inc)
        if n == 1:
            if v in out:
                out[v][tk] = out[v].get(tk, 0j) - 2j * c
            refl = -c
            nk = tk + lengths[eid]
            if nk <= hk:
                push(nk, inc[0].other(v), eid, refl)
            continue
        for e in inc:
            amp = (2.0 - n) / n * c if e.id == eid else 2.0 / n * c
            nk = tk + lengths[e.id]
            if nk <= hk:
                push(nk, e.other(v), e.id, amp)
    return {v: sorted((to_time(k), a) for k, a in d.items() if abs(a) >= floor) for v, d in out.items()}


# --- response matrix --------------------------------------------------------


@dataclass(eq=False)
class ResponseMatrix:
    """Boundary response ``R_ij`` (source ``i``, receiver ``j``) on ``[0, T]``.

    ``spikes[i][j]`` lists ``(time, amplitude)`` of the singular terms past
    ``t = 0``; the diagonal additionally carries ``i * delta(t)`` (flag
    ``leading``).  ``regular[i, j, n]`` holds the remaining grid masses divided
    by ``tau``: for data produced by the characteristic scheme these are the
    scheme's own staggered samples, and ``kernel`` turns them into point
    values of the smooth kernel.
    """

    tau: float
    labels: tuple[str, ...]
    spikes: list[list[list[tuple[float, complex]]]]
    regular: np.ndarray
    leading: complex = 1j
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def steps(self) -> int:
        return self.regular.shape[2] - 1

    @property
    def horizon(self) -> float:
        return self.steps * self.tau

    @property
    def t(self) -> np.ndarray:
        return self.tau * np.arange(self.steps + 1)

    def spike_index(self, time: float) -> int:
        return int(round(time / self.tau))

    def impulse(self, i: int | None = None, j: int | None = None) -> np.ndarray:
        """Discrete impulse response: grid masses including spikes."""
        if i is None:
            h = np.empty(self.regular.shape, dtype=complex)
            for a in range(self.size):
                for b in range(self.size):
                    h[a, b] = self.impulse(a, b)
            return h
        h = self.tau * self.regular[i, j].astype(complex)
        for t, amp in self.spikes[i][j]:
            h[self.spike_index(t)] += amp
        if i == j:
            h[0] += self.leading
        return h

    @classmethod
    def from_impulse(
        cls,
        h: np.ndarray,
        tau: float,
        labels,
        detector: "SpikeDetector | None" = None,
        meta: dict | None = None,
    ) -> "ResponseMatrix":
        h = np.asarray(h, dtype=complex)
        m = h.shape[0]
        detector = detector or SpikeDetector()
        spikes = [[[] for _ in range(m)] for _ in range(m)]
        regular = np.zeros(h.shape, dtype=complex)
        for i in range(m):
            for j in range(m):
                seq = h[i, j].copy()
                if i == j:
                    seq[0]
                    seq[0] = 0.0
                idx, amps = detector.split(seq, tau)
                for k, a_ in zip(idx, amps):
                    seq[k] -= a_
                spikes[i][j] = [(k * tau, complex(a_)) for k, a_ in zip(idx, amps)]
                regular[i, j] = seq / tau
        return cls(tau, tuple(labels), spikes, regular, 1j, dict(meta or {}))

    def first_arrival(self, i: int, j: int, floor: float | None = None, noise: float = 10.0) -> int | None:
        """First grid index where the entry rises above ``noise`` times the
        floor (default: ``meta['noise_floor']`` or 1e-9)."""
        if floor is None:
            floor = float(self.meta.get("noise_floor", 1e-9))
        h = self.impulse(i, j)
        if i == j:
            h[0] -= self.leading
        mag = np.abs(h)
        level = floor
        for n, v in enumerate(mag):
            if v > noise * level and v > floor:
                return n
        return None

    def kernel(self, i: int, j: int, lo: int, hi: int) -> np.ndarray:
        """Point values of the smooth kernel on indices ``lo..hi``.

        The segment must be free of spikes strictly inside; grid masses are
        smoothed with the (1, 2, 1)/4 hat and the two samples at each end are
        extrapolated quadratically from the interior.
        """
        return smooth_density(self.regular[i, j, lo : hi + 1] * self.tau, self.tau)


def smooth_density(masses: np.ndarray, tau: float) -> np.ndarray:
    """Density of a piecewise smooth signal from its (possibly staggered) grid
    masses, valid between two singular points at the segment ends."""
    m = np.asarray(masses, dtype=complex)
    n = m.size
    if n < 7:
        raise ValueError("segment too short for kernel estimation")
    rho = np.empty(n, dtype=complex)
    rho[2:-2] = (m[1:-3] + 2 * m[2:-2] + m[3:-1]) / (4 * tau)
    # quadratic extrapolation towards both ends
    for k in (1, 0):
        rho[k] = 3 * rho[k + 1] - 3 * rho[k + 2] + rho[k + 3]
        rho[n - 1 - k] = 3 * rho[n - 2 - k] - 3 * rho[n - 3 - k] + rho[n - 4 - k]
    return rho


@dataclass
class SpikeDetector:
    """Grid points standing out of their neighbourhood.

    The scheme's smooth response may live on every other grid point, so each
    point is compared with its ``window`` same-parity neighbours on each side
    (offsets 2, 4, ...).  It is a spike when its distance to their median
    exceeds ``factor`` times their median absolute deviation plus ``floor``.
    """

    factor: float = 10.0
    window: int = 3
    floor: float = 1e-9
    min_amplitude: float = 1e-6

    def detect(self, seq: np.ndarray) -> np.ndarray:
        seq = np.asarray(seq, dtype=complex)
        k = self.window
        if seq.size < 4 * k + 2:
            return np.flatnonzero(np.abs(seq) > max(self.floor, self.min_amplitude))
        pad = np.pad(seq, 2 * k, mode="reflect")
        n = seq.size
        offs = [o for o in range(-2 * k, 2 * k + 1, 2) if o]
        nb = np.stack([pad[2 * k + o : 2 * k + o + n] for o in offs], axis=1)
        med = np.median(nb.real, axis=1) + 1j * np.median(nb.imag, axis=1)
        mad = np.median(np.abs(nb - med[:, None]), axis=1)
        dev = np.abs(seq - med)
        return np.flatnonzero((dev > self.factor * mad + self.floor) & (dev > self.min_amplitude))

    def split(self, seq: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
        """Spike indices and amplitudes (grid mass minus local smooth mass)."""
        idx = self.detect(seq)
        mask = np.zeros(seq.size, bool)
        mask[idx] = True
        amps = []
        for k in idx:
            est = []
            for side in (-1, 1):
                p1, p2 = k + 2 * side, k + 4 * side
                if all(0 <= p < seq.size and not mask[p] for p in (p1, p2)):
                    est.append(2 * seq[p1] - seq[p2])
                elif 0 <= p1 < seq.size and not mask[p1]:
                    est.append(seq[p1])
            smooth = np.mean(est) if est else 0.0
            amps.append(seq[k] - smooth)
        return idx, np.array(amps, dtype=complex)


def extract_response(
    tree: MetricTree,
    potentials: Mapping[str, EdgePotential],
    grid: TimeGrid,
    detector: SpikeDetector | None = None,
    cross_check: bool = True,
    check_tol: float | None = None,
) -> ResponseMatrix:
    """Response matrix from unit-step controls, one column per boundary vertex.

    Step responses are differenced into grid masses; jumps become spikes and
    the rest is the regular kernel.  Spike times are checked against ray
    tracing (tolerance ``check_tol``, default ``10 * tau`` scaled by the
    potential size).
    """
    m = len(tree.boundary)
    steps = grid.steps
    g = np.zeros((steps + 1, m, m), dtype=complex)
    for j in range(m):
        g[:, j, j] = 1.0
    ev = evolve(tree, potentials, g, grid)
    step_resp = ev.outputs  # (n, receiver, source)
    h = np.diff(step_resp, axis=0, prepend=0.0)
    h = np.transpose(h, (2, 1, 0))  # (source, receiver, n)
    R = ResponseMatrix.from_impulse(h, grid.tau, tree.boundary, detector, meta={"horizon": grid.horizon})
    if cross_check:
        vmax = max((pot.sup() for pot in potentials.values()), default=0.0)
        tol = check_tol if check_tol is not None else 10 * grid.tau * (1 + 4 * vmax * tree.total_length)
        _cross_check(tree, R, grid, tol)
    return R


def _cross_check(tree: MetricTree, R: ResponseMatrix, grid: TimeGrid, tol: float) -> None:
    for i, src in enumerate(tree.boundary):
        rays = ray_trace_singular(tree, src, grid.horizon, grid.tau)
        for j, v in enumerate(tree.boundary):
            got = {R.spike_index(t): a for t, a in R.spikes[i][j]}
            for t, amp in rays[v]:
                if abs(amp) < max(tol, 1e-6) or t <= 0:
                    continue
                k = R.spike_index(t)
                if k not in got:
                    raise SpikeResolutionError(
                        f"spike R[{src},{v}] at t={t:.6g} (amplitude {amp:.3g}) not resolved; refine tau"
                    )
                if abs(got[k] - amp) > tol:
                    raise SpikeResolutionError(
                        f"spike R[{src},{v}] at t={t:.6g}: {got[k]:.6g} vs ray {amp:.6g}"
                    )


def apply_response(R: ResponseMatrix, controls) -> np.ndarray:
    """Outputs ``u2`` at the boundary for controls ``f`` sampled on the grid;
    ``controls[n, j]`` is the control at source ``j``."""
    f = np.asarray(controls, dtype=complex)
    if f.ndim == 1:
        f = f[:, None]
    n = f.shape[0]
    if n > R.steps + 1:
        raise ValueError("controls extend beyond the response horizon")
    out = np.zeros((n, R.size), dtype=complex)
    for i in range(R.size):
        for j in range(R.size):
            h = R.impulse(i, j)[:n]
            out[:, j] += np.convolve(f[:, i], h)[:n]
    return out
