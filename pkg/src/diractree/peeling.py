"""Leaf peeling: recover a sheaf, cut it off, and recompute the data of the rest.

Two reductions are provided.  ``peel_sheaf`` works on TW samples: Cauchy
problems carry the boundary data of the sheaf members to the common vertex
``v0``, where the reduced TW matrix is read off.  ``peel_response`` does the
same on the discrete response: the characteristic scheme is marched sideways
along each member edge, which turns boundary traces into traces at ``v0``,
and the reduced response follows by causal deconvolution.  Being exact for
the discrete scheme, the second one is the default inside ``reconstruct``.

Member edges are always handled in the coordinate starting at their boundary
vertex.  In it ``psi2`` (or ``u2``) at ``v0`` points away from the reduced
tree, so the balance condition makes the reduced second component the plain
sum over the members.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.linalg import solve_triangular, toeplitz

from diractree.forward_time import ResponseMatrix, cell_coupling
from diractree.halfline import RecoveredPotential, ResponseFunction, recover_potential
from diractree.spectral import SpectralGrid, TWSamples, edge_transfer
from diractree.topology import TopologyError, TopologyReading, read_topology
from diractree.tree import (
    Edge,
    EdgePotential,
    MetricTree,
    edge_correspondence,
    orient_instance,
    tree_equivalent,
    validate,
)


class PeelingError(RuntimeError):
    def __init__(self, stage: str, message: str, partial=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.partial = partial


class HorizonError(ValueError):
    pass


# --- boundary edge potentials ------------------------------------------------


def boundary_edge_potential(R: ResponseMatrix, i: int, length: float, edge: str) -> tuple[EdgePotential, float]:
    """Potential on the boundary edge at ``R.labels[i]`` from the diagonal entry
    on ``[0, 2 l]``, in the coordinate starting at the boundary vertex.

    Returns the potential and the smallest eigenvalue of the connecting operator.
    """
    n = int(round(length / R.tau))
    if 2 * n > R.steps:
        raise HorizonError(f"horizon {R.horizon:.6g} shorter than twice the edge length {length:.6g}")
    r = ResponseFunction(R.tau, R.kernel(i, i, 0, 2 * n))
    rec: RecoveredPotential = recover_potential(r, check=True)
    return EdgePotential(edge, R.tau, rec.p, rec.q), float(rec.min_eigenvalue)


# --- discrete sideways march -------------------------------------------------


def march_edge(potential: EdgePotential | None, n_cells: int, tau: float, g: np.ndarray, y: np.ndarray):
    """Carry boundary traces (``u1 = g``, ``u2 = y`` on ``n = 0..N``) across an
    edge of the characteristic scheme.

    Returns ``(u1, u2)`` at the far node for ``n = 0..N - n_cells``; trailing
    axes of ``g`` and ``y`` are independent experiments.
    """
    g = np.asarray(g, dtype=complex)
    y = np.asarray(y, dtype=complex)
    C, S = cell_coupling(potential, n_cells, tau)
    a = g + 1j * y
    b = g - 1j * y
    for k in range(n_cells):
        c, s = C[k], S[k]
        a_next = (a[1:] + np.conj(s) * b[:-1]) / c
        b_next = np.empty_like(a_next)
        b_next[0] = 0.0
        b_next[1:] = c * b[:-2] + s * a_next[:-1]
        a, b = a_next, b_next
    return (a + b) / 2, 1j * (b - a) / 2


def causal_deconvolve(y: np.ndarray, g: np.ndarray, shift: int, length: int) -> np.ndarray:
    """``h`` with ``(g * h)[n + shift] = y[n + shift]`` for ``n < length``.

    ``g`` vanishes before ``shift``; ``y`` may carry several columns.
    """
    g0 = g[shift : shift + length]
    if abs(g0[0]) < 1e-12:
        raise PeelingError("deconvolution", f"leading coefficient {abs(g0[0]):.3g} too small")
    T = toeplitz(g0, np.zeros(length, dtype=complex))
    return solve_triangular(T, y[shift : shift + length], lower=True, check_finite=False)


def causal_convolve(a: np.ndarray, b: np.ndarray, length: int) -> np.ndarray:
    """First ``length`` samples of the convolution along axis 0."""
    a = a[:length]
    b = b[:length]
    out = np.zeros((length,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]), dtype=complex)
    for k in range(length):
        out[k:] += a[k] * b[: length - k]
    return out


@dataclass
class ResponseReduction:
    h: np.ndarray  # reduced grid masses (source, receiver, n)
    labels: tuple[str, ...]
    residual: float  # disagreement of u1 at v0 across members, relative
    symmetry: float  # reciprocity defect of the reduced response, relative
    echo_defect: float  # consistency of the reduced data seen from other members


def peel_response(
    h: np.ndarray,
    tau: float,
    labels,
    members: list[int],
    potentials: list[EdgePotential | None],
    cells: list[int],
    v0: str,
) -> ResponseReduction:
    """Reduced discrete response after cutting the sheaf ``members`` at ``v0``.

    ``h[s, j, n]`` are the grid masses (impulse response including the
    leading ``i`` on the diagonal), ``potentials`` the member potentials in
    their boundary coordinate and ``cells`` the member lengths in steps.
    """
    h = np.asarray(h, dtype=complex)
    m = h.shape[0]
    N = h.shape[2] - 1
    outer = [k for k in range(m) if k not in members]
    Lmax, Lmin = max(cells), min(cells)
    Nv = N - Lmax
    s1 = members[int(np.argmin(cells))]
    length = Nv - Lmin + 1
    if length < 2:
        raise HorizonError("horizon exhausted by the sheaf")

    u1s, u2s = [], []
    for j, pot, L in zip(members, potentials, cells):
        g = np.zeros((N + 1, m), dtype=complex)
        g[0, j] = 1.0
        u1, u2 = march_edge(pot, L, tau, g, h[:, j, :].T)
        u1s.append(u1[: Nv + 1])
        u2s.append(u2[: Nv + 1])
    u1s = np.array(u1s)  # (member, n, source)
    gt = u1s.mean(axis=0)
    scale = max(float(np.max(np.abs(gt))), 1e-300)
    residual = float(np.max(np.abs(u1s - gt[None]))) / scale
    yt = np.sum(u2s, axis=0)

    new_labels = []
    index = {}
    placed = False
    for k in range(m):
        if k in members:
            if not placed:
                index[None] = len(new_labels)
                new_labels.append(v0)
                placed = True
        else:
            index[k] = len(new_labels)
            new_labels.append(labels[k])
    z = index[None]
    mp = len(new_labels)
    out = np.zeros((mp, mp, length), dtype=complex)

    g1 = gt[:, s1]
    # excite v0 alone: deconvolve the s1 experiment
    rhs = np.column_stack([yt[:, s1]] + [h[s1, j, : Nv + 1] for j in outer])
    sol = causal_deconvolve(rhs, g1, Lmin, length)
    out[z, z] = sol[:, 0]
    for c, j in enumerate(outer):
        out[z, index[j]] = sol[:, c + 1]
    # outer sources: subtract what passes through v0
    for s in outer:
        gs = gt[:, s]
        out[index[s], z] = yt[:length, s] - causal_convolve(out[z, z], gs, length)
        for j in outer:
            out[index[s], index[j]] = h[s, j, :length] - causal_convolve(out[z, index[j]], gs, length)

    def rel(a, b):
        return float(np.max(np.abs(a - b), initial=0.0)) / max(float(np.max(np.abs(b), initial=0.0)), 1e-12)

    sym = 0.0
    for s in outer:
        sym = max(sym, rel(out[index[s], z], out[z, index[s]]))
    # members other than s1 must see the same reduced response
    echo = 0.0
    for j in members:
        if j == s1:
            continue
        pred = causal_convolve(out[z, z], gt[:, j], length)
        echo = max(echo, rel(pred, yt[:length, j]))
    return ResponseReduction(out, tuple(new_labels), residual, sym, echo)


# --- spectral peel -----------------------------------------------------------


@dataclass
class SpectralReduction:
    tw: TWSamples
    kept: np.ndarray  # mask of retained lambda samples
    residual: float  # max relative disagreement of psi1 at v0
    symmetry: float


def _carry(pot: EdgePotential | None, L: float, lam: np.ndarray, data: np.ndarray, refine: bool) -> np.ndarray:
    T = edge_transfer(pot, lam, length=L, refine=refine)
    return np.einsum("kab,k...b->k...a", T, data)


def peel_sheaf(
    tw: TWSamples,
    members: list[int],
    potentials: list[EdgePotential | None],
    lengths: list[float],
    v0: str,
    drop_tol: float = 1e-8,
    max_dropped: float = 0.3,
    consistency_tol: float | None = None,
    refine: bool = True,
) -> SpectralReduction:
    """Reduced TW matrix after cutting the sheaf ``members`` at ``v0``.

    ``tw.M[k, j, i]`` is ``psi2`` at boundary ``j`` for ``psi1 = e_i``.  For
    each column the data ``(delta_ij, M[j, i])`` are carried across every
    member edge; ``psi1`` must agree at ``v0`` and ``psi2`` adds up.
    """
    lam = tw.grid.points
    M = tw.M
    m = tw.size
    outer = [k for k in range(m) if k not in members]
    s1 = members[int(np.argmin(lengths))]
    # psi at v0 for every column i, through each member j: (k, member, i, 2)
    far = []
    for j, pot, L in zip(members, potentials, lengths):
        data = np.zeros((lam.size, m, 2), dtype=complex)
        data[:, j, 0] = 1.0
        data[:, :, 1] = M[:, j, :]
        far.append(_carry(pot, L, lam, data, refine))
    far = np.array(far)  # (member, k, i, 2)
    psi1 = far[:, :, :, 0].mean(axis=0)  # (k, i)
    psi2 = far[:, :, :, 1].sum(axis=0)
    spread = np.max(np.abs(far[:, :, :, 0] - psi1[None]), axis=0)  # (k, i)

    p10 = psi1[:, s1]
    kept = np.abs(p10) > drop_tol * np.maximum(1.0, np.abs(psi2[:, s1]))
    if 1 - kept.mean() > max_dropped:
        raise PeelingError("peel", f"lambda grid unsuitable: {100 * (1 - kept.mean()):.0f}% samples dropped")
    denom = np.maximum(np.abs(p10[kept]), 1e-300)
    residual = float(np.max(spread[kept] / denom[:, None], initial=0.0))
    if consistency_tol is not None and residual > consistency_tol:
        raise PeelingError("peel", f"potential/length recovery inconsistent: psi1 spread {residual:.3g}")

    new_labels, index, placed = [], {}, False
    for k in range(m):
        if k in members:
            if not placed:
                index[None] = len(new_labels)
                new_labels.append(v0)
                placed = True
        else:
            index[k] = len(new_labels)
            new_labels.append(tw.labels[k])
    z = index[None]
    mp = len(new_labels)
    lk = lam[kept]
    Mk = M[kept]
    p1 = psi1[kept]
    p2 = psi2[kept]
    out = np.zeros((lk.size, mp, mp), dtype=complex)
    # column v0: psi1 = e_0
    out[:, z, z] = p2[:, s1] / p1[:, s1]
    for j in outer:
        out[:, index[j], z] = Mk[:, j, s1] / p1[:, s1]
    # column i outer: subtract the multiple of the v0 column that cancels psi1 at v0
    for i in outer:
        out[:, z, index[i]] = p2[:, i] - p1[:, i] * out[:, z, z]
        for j in outer:
            out[:, index[j], index[i]] = Mk[:, j, i] - p1[:, i] * out[:, index[j], z]
    sym = float(np.max(np.abs(out - np.swapaxes(out, 1, 2)), initial=0.0))
    red = TWSamples(SpectralGrid(lk), out, tuple(new_labels), meta={"dropped": int((~kept).sum())})
    return SpectralReduction(red, kept, residual, sym)


# --- full pipeline -----------------------------------------------------------


@dataclass
class ReconstructConfig:
    method: str = "time"  # "time" (discrete peel) or "spectral" (TW peel + inverse transform)
    degree_tol: float = 0.2
    arrival_floor: float | None = None  # default: the data's own noise floor
    slack: int = 2
    consistency_tol: float = 1e-3  # recovered potentials carry O(tau^2) errors
    echo_tol: float = 0.05
    clamped: str = "root"
    lambda_eps: float = 1.0
    band: float = 0.6  # spectral route: K = band * pi / tau
    max_iterations: int = 100

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ReconstructionReport:
    tree: MetricTree | None
    potentials: dict[str, EdgePotential]
    iterations: list[dict] = field(default_factory=list)
    metrics: dict | None = None
    config: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.tree is not None


def _peel_spectral(R: ResponseMatrix, members, pots, lengths, cells, v0, cfg: ReconstructConfig):
    from diractree.bridge import response_to_tw, tw_to_response

    K = cfg.band * np.pi / R.tau
    dw = 2 * np.pi / (2 * R.horizon)
    n = int(np.ceil(K / dw))
    grid = SpectralGrid(dw * np.arange(-n, n + 1) + 1j * cfg.lambda_eps)
    tw = response_to_tw(R, grid)
    red = peel_sheaf(tw, list(members), pots, lengths, v0, refine=True)
    if red.kept.sum() != len(grid):
        raise PeelingError("peel", "samples dropped; the inverse transform needs a uniform grid")
    shrink = max(cells) + min(cells)
    R2 = tw_to_response(red.tw, (R.steps - shrink) * R.tau, R.tau)
    return R2, {"psi1_spread": red.residual, "symmetry": red.symmetry, "K": K}


def reconstruct(data, config: ReconstructConfig | None = None, dump=None) -> ReconstructionReport:
    """Recover the tree and its potentials from boundary data.

    ``data`` is a ``ResponseMatrix`` or ``TWSamples`` (converted by the
    inverse transform first).  Each iteration reads the boundary edges off
    the diagonal, recovers their potentials, picks a sheaf and reduces the
    data to the tree without it.  ``dump(stage, index, obj)`` receives
    intermediate objects when given.
    """
    from diractree.bridge import tw_to_response

    cfg = config or ReconstructConfig()
    report = ReconstructionReport(None, {}, config=cfg.to_dict())
    stage = "input"
    try:
        if isinstance(data, TWSamples):
            stage = "bridge"
            horizon = data.meta.get("horizon")
            tau = data.meta.get("tau")
            if horizon is None or tau is None:
                raise PeelingError(stage, "TW samples need 'horizon' and 'tau' in their metadata")
            data = tw_to_response(data, float(horizon), float(tau))
        R: ResponseMatrix = data
        tau = R.tau
        labels0 = tuple(R.labels)
        h = R.impulse()
        vertices = list(labels0) + [cfg.clamped]
        edges: list[Edge] = []
        pots: dict[str, EdgePotential] = {}
        centre_count = 0
        for it in range(cfg.max_iterations):
            stage = "topology"
            topo: TopologyReading = read_topology(R, cfg.degree_tol, cfg.arrival_floor, cfg.slack)
            info = {"iteration": it, "boundary": list(R.labels), "horizon": R.horizon, "topology": topo.to_dict()}
            if dump:
                dump("response", it, R)
                dump("topology", it, topo)
            if topo.sheaf is None:
                stage = "final-edge"
                length, pot, lam, amp = reduce_final_edge(R, f"e{len(edges) + 1}", cfg.echo_tol)
                eid = pot.edge
                edges.append(Edge(eid, R.labels[0], cfg.clamped, length))
                pots[eid] = pot
                info.update({"final_edge": eid, "length": length, "echo": [amp.real, amp.imag], "min_eigenvalue": lam})
                report.iterations.append(info)
                break
            P = topo.presheaves[topo.sheaf]
            stage = "boundary-potentials"
            centre_count += 1
            v0 = f"n{centre_count}"
            vertices.append(v0)
            member_pots, lengths, cells, eigs = [], [], [], []
            for k in P.members:
                length = topo.readings[k].length
                eid = f"e{len(edges) + 1}"
                pot, lam = boundary_edge_potential(R, k, length, eid)
                edges.append(Edge(eid, R.labels[k], v0, length))
                pots[eid] = pot
                member_pots.append(pot)
                lengths.append(length)
                cells.append(int(round(length / tau)))
                eigs.append(lam)
            info["sheaf"] = {"vertex": v0, "members": [R.labels[k] for k in P.members], "degree": P.degree}
            info["min_eigenvalue"] = min(eigs)
            stage = "peel"
            if cfg.method == "time":
                red = peel_response(h, tau, R.labels, list(P.members), member_pots, cells, v0)
                if red.residual > cfg.consistency_tol:
                    raise PeelingError(stage, f"u1 disagreement {red.residual:.3g} at {v0}")
                info.update({"u1_spread": red.residual, "symmetry": red.symmetry, "echo_defect": red.echo_defect})
                h = red.h
                R = ResponseMatrix.from_impulse(h, tau, red.labels)
            elif cfg.method == "spectral":
                R, diag = _peel_spectral(R, P.members, member_pots, lengths, cells, v0, cfg)
                h = R.impulse()
                info.update(diag)
            else:
                raise ValueError(f"unknown method {cfg.method!r}")
            report.iterations.append(info)
        else:
            raise PeelingError(stage, "iteration limit reached")
        stage = "assemble"
        tree = MetricTree(tuple(vertices), tuple(edges), labels0, cfg.clamped)
        tree, pots = orient_instance(tree, pots)
        rep = validate(tree)
        if not rep.ok:
            raise PeelingError(stage, f"recovered tree invalid: {sorted(rep.kinds())}")
        report.tree = tree
        report.potentials = pots
    except (PeelingError, TopologyError, HorizonError, ValueError, np.linalg.LinAlgError) as exc:
        msg = str(exc)
        report.error = msg if msg.startswith("[") else f"[{stage}] {msg}"
    return report


def reduce_final_edge(R: ResponseMatrix, edge: str = "e1", echo_tol: float = 0.05):
    """Length and potential of a lone edge to the clamped vertex.

    Returns ``(length, potential, min eigenvalue, echo amplitude)``; the echo
    must be the Dirichlet value ``2i``.
    """
    if R.size != 1:
        raise PeelingError("final-edge", f"expected one boundary vertex, got {R.size}")
    sp = [(t, a) for t, a in R.spikes[0][0] if t > 0]
    if not sp:
        raise HorizonError("no echo from the clamped vertex within the horizon")
    t0, a0 = min(sp, key=lambda s: s[0])
    if abs(a0 - 2j) > echo_tol * 2:
        raise PeelingError("final-edge", f"echo {a0:.4g} is not a Dirichlet reflection")
    length = t0 / 2
    pot, lam = boundary_edge_potential(R, 0, length, edge)
    return length, pot, lam, complex(a0)


def compare_reconstruction(
    truth: MetricTree,
    truth_potentials: Mapping[str, EdgePotential],
    tree: MetricTree,
    potentials: Mapping[str, EdgePotential],
    length_tol: float = 1e-9,
) -> dict:
    """Isomorphism flag, per-edge length errors and relative potential errors.

    Without an isomorphism only the flag is returned.  Potentials are compared
    on the truth's grid after matching edge coordinates.
    """
    same, mapping = tree_equivalent(truth, tree, tol=np.inf)
    out: dict = {"isomorphic": bool(same), "edges": {}}
    if not same:
        return out
    corr = edge_correspondence(truth, tree, mapping)
    worst_len, worst_l2, worst_inf = 0.0, 0.0, 0.0
    e2 = tree.edge_map
    for e in truth.edges:
        eid2, flipped = corr[e.id]
        dl = abs(e.length - e2[eid2].length)
        entry = {"match": eid2, "flipped": flipped, "length_error": dl}
        tp = truth_potentials.get(e.id)
        rp = potentials.get(eid2)
        if tp is not None and rp is not None:
            if flipped:
                rp = rp.reversed()
            x = tp.x[tp.x <= rp.length + 1e-12]
            p1, q1 = tp.at(x)
            p2, q2 = rp.at(x)
            diff = np.sqrt((p1 - p2) ** 2 + (q1 - q2) ** 2)
            mag = np.sqrt(p1**2 + q1**2)
            l2 = float(np.sqrt(np.trapezoid(diff**2, x) / max(np.trapezoid(mag**2, x), 1e-300)))
            linf = float(np.max(diff) / max(np.max(mag), 1e-300))
            if np.max(mag) == 0:
                l2 = float(np.sqrt(np.trapezoid(diff**2, x)))
                linf = float(np.max(diff))
            entry.update({"potential_l2": l2, "potential_linf": linf})
            worst_l2, worst_inf = max(worst_l2, l2), max(worst_inf, linf)
        worst_len = max(worst_len, dl)
        out["edges"][e.id] = entry
    out["max_length_error"] = worst_len
    out["max_potential_l2"] = worst_l2
    out["max_potential_linf"] = worst_inf
    out["lengths_within_tol"] = bool(worst_len <= length_tol)
    return out
