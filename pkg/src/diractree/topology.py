"""Boundary lengths, vertex degrees, pre-sheaves and sheaves from a response matrix.

The diagonal entry ``R_ii`` carries ``i delta(t)`` and, at ``t = 2 l_i``, the
echo of the first internal vertex.  With ``n`` edges meeting there the echo
is ``2 i (n - 2) / n``; a Dirichlet end (the edge runs to the clamped vertex)
echoes ``2 i``.  Off-diagonal entries first arrive after the travel time
between the two boundary vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from diractree.forward_time import ResponseMatrix

#: echo of a vertex of degree n is ECHO_SCALE * i (n - 2) / n
ECHO_SCALE = 2.0


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeReading:
    """What the diagonal entry says about one boundary edge.

    ``degree == 1`` marks a Dirichlet echo: the edge ends at the clamped vertex.
    """

    length: float
    degree: int
    amplitude: complex
    spike_time: float

    @property
    def terminal(self) -> bool:
        return self.degree == 1


def degree_from_amplitude(a: complex, tol: float = 0.2, dirichlet_tol: float = 0.05) -> int:
    if abs(a - ECHO_SCALE * 1j) < dirichlet_tol * ECHO_SCALE:
        return 1
    y = a.imag / ECHO_SCALE
    if y >= 1.0:
        raise TopologyError(f"echo amplitude {a:.6g} exceeds the Dirichlet value")
    n = 2.0 / (1.0 - y)
    k = int(round(n))
    if abs(n - k) > tol or k < 3:
        raise TopologyError(f"non-integer vertex degree {n:.3f} from echo amplitude {a:.6g}")
    return k


def extract_length_and_degree(spikes, tol: float = 0.2) -> EdgeReading:
    """Length and far-end degree from the spikes ``(t, a)`` of a diagonal entry."""
    spikes = [(t, a) for t, a in spikes if t > 0]
    if not spikes:
        raise TopologyError("no echo within the horizon: edge longer than T/2 or degree-2 vertex")
    t0, a0 = min(spikes, key=lambda s: s[0])
    return EdgeReading(t0 / 2.0, degree_from_amplitude(complex(a0), tol), complex(a0), float(t0))


def read_boundary_edges(R: ResponseMatrix, tol: float = 0.2) -> list[EdgeReading]:
    out = []
    for i, lab in enumerate(R.labels):
        try:
            out.append(extract_length_and_degree(R.spikes[i][i], tol))
        except TopologyError as exc:
            raise TopologyError(f"boundary vertex {lab!r}: {exc}") from exc
    return out


def _arrival_table(R: ResponseMatrix, floor: float) -> np.ndarray:
    m = R.size
    A = np.full((m, m), -1, dtype=int)
    for i in range(m):
        for j in range(m):
            if i != j:
                k = R.first_arrival(i, j, floor=floor)
                A[i, j] = -1 if k is None else k
    return A


@dataclass
class PreSheaf:
    members: tuple[int, ...]  # indices into the current boundary list
    degree: int
    lengths: tuple[float, ...]

    @property
    def is_sheaf(self) -> bool:
        return self.degree == len(self.members) + 1


def detect_presheaves(
    R: ResponseMatrix, readings: list[EdgeReading], floor: float | None = None, slack: int = 2
) -> list[PreSheaf]:
    """Group boundary edges meeting at a common internal vertex.

    ``i`` and ``j`` share a vertex iff ``R_ij`` first arrives at ``l_i + l_j``
    (within ``slack`` steps).  The relation must be transitive.
    """
    m = R.size
    A = _arrival_table(R, floor)
    L = np.array([r.length for r in readings])
    adj = np.zeros((m, m), bool)
    for i in range(m):
        for j in range(m):
            if i != j and A[i, j] >= 0:
                adj[i, j] = abs(A[i, j] * R.tau - L[i] - L[j]) <= slack * R.tau + 1e-9
    adj = adj & adj.T
    groups: list[list[int]] = []
    seen = set()
    for i in range(m):
        if i in seen or readings[i].terminal:
            continue
        g = [i] + [j for j in range(m) if adj[i, j]]
        for a in g:
            for b in g:
                if a != b and not adj[a, b]:
                    c = i if i not in (a, b) else g[0]
                    raise TopologyError(
                        f"non-transitive grouping for {R.labels[a]!r}, {R.labels[b]!r} via {R.labels[c]!r}"
                    )
        seen.update(g)
        groups.append(sorted(g))
    out = []
    for g in groups:
        degs = {readings[k].degree for k in g}
        if len(degs) != 1:
            raise TopologyError(f"members {[R.labels[k] for k in g]} disagree on the vertex degree {degs}")
        n = degs.pop()
        if n < len(g) + 1:
            raise TopologyError(f"degree {n} too small for group {[R.labels[k] for k in g]}")
        out.append(PreSheaf(tuple(g), n, tuple(L[k] for k in g)))
    return out


def presheaf_distance(
    P: PreSheaf, Q: PreSheaf, R: ResponseMatrix, readings, floor: float | None = None, slack: int = 2
) -> float:
    """Distance between the centres: first arrival minus the two edge lengths.

    Every representative pair is tried; they must agree within ``slack`` steps.
    """
    ds = []
    for i in P.members:
        for j in Q.members:
            k = R.first_arrival(i, j, floor=floor)
            if k is None:
                raise TopologyError(f"horizon too short: no arrival from {R.labels[i]!r} at {R.labels[j]!r}")
            ds.append(k * R.tau - readings[i].length - readings[j].length)
    if max(ds) - min(ds) > slack * R.tau + 1e-9:
        raise TopologyError(f"representative-dependent distance: {min(ds):.6g} .. {max(ds):.6g}")
    return float(ds[0])


def distance_matrix(presheaves, R, readings, floor: float | None = None, slack: int = 2) -> np.ndarray:
    k = len(presheaves)
    D = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            D[a, b] = D[b, a] = presheaf_distance(presheaves[a], presheaves[b], R, readings, floor, slack)
    return D


def find_sheaves(presheaves: list[PreSheaf], D: np.ndarray, tol: float = 0.0) -> list[int]:
    """Indices of the pre-sheaves at maximal mutual distance (one if there is one)."""
    if not presheaves:
        raise TopologyError("no pre-sheaves")
    if len(presheaves) == 1:
        return [0]
    dmax = D.max()
    best = None
    for a in range(len(presheaves)):
        for b in range(a + 1, len(presheaves)):
            if D[a, b] >= dmax - tol:
                key = min(presheaves[a].members + presheaves[b].members)
                if best is None or key < best[0]:
                    best = (key, a, b)
        # pairs are scanned in index order; the first minimum wins
    return [best[1], best[2]]


def choose_sheaf(presheaves: list[PreSheaf], D: np.ndarray, tol: float = 0.0) -> int:
    """The sheaf peeled next: among the maximal-distance candidates, one whose
    vertex joins exactly one non-boundary edge, smallest boundary index first."""
    if len(presheaves) == 1:
        cand = [0]
    else:
        dmax = D.max()
        cand = sorted(
            {x for a in range(len(presheaves)) for b in range(len(presheaves)) if a != b and D[a, b] >= dmax - tol for x in (a, b)}
        )
    sheaves = [c for c in cand if presheaves[c].is_sheaf]
    if not sheaves:
        raise TopologyError("no sheaf among the maximal-distance pre-sheaves")
    return min(sheaves, key=lambda c: min(presheaves[c].members))


@dataclass
class TopologyReading:
    labels: tuple[str, ...]
    readings: list[EdgeReading]
    presheaves: list[PreSheaf]
    distances: np.ndarray
    sheaf: int | None
    thresholds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        lab = self.labels
        return {
            "boundary": list(lab),
            "edges": [
                {
                    "vertex": lab[k],
                    "length": r.length,
                    "degree": r.degree,
                    "echo": [r.amplitude.real, r.amplitude.imag],
                }
                for k, r in enumerate(self.readings)
            ],
            "groups": [
                {"members": [lab[k] for k in P.members], "degree": P.degree, "sheaf": P.is_sheaf}
                for P in self.presheaves
            ],
            "distances": self.distances.tolist(),
            "sheaf": None if self.sheaf is None else [lab[k] for k in self.presheaves[self.sheaf].members],
            "thresholds": dict(self.thresholds),
        }


def read_topology(R: ResponseMatrix, degree_tol: float = 0.2, floor: float | None = None, slack: int = 2) -> TopologyReading:
    readings = read_boundary_edges(R, degree_tol)
    thresholds = {"degree_tol": degree_tol, "arrival_floor": floor, "slack_steps": slack, "tau": R.tau}
    if len(readings) == 1 and readings[0].terminal:
        return TopologyReading(R.labels, readings, [], np.zeros((0, 0)), None, thresholds)
    ps = detect_presheaves(R, readings, floor, slack)
    D = distance_matrix(ps, R, readings, floor, slack)
    s = choose_sheaf(ps, D, tol=slack * R.tau)
    return TopologyReading(R.labels, readings, ps, D, s, thresholds)
