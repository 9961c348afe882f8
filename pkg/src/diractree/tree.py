"""Metric trees, edge potentials and random test instances.

A tree carries a distinguished clamped leaf (homogeneous Dirichlet condition)
and an ordered list ``boundary`` of the remaining leaves, where controls act
and responses are recorded.  Each edge is identified with ``[0, length]``
running from ``start`` to ``end``; potentials are sampled in that coordinate.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.interpolate import CubicSpline


@dataclass(frozen=True)
class Edge:
    id: str
    start: str
    end: str
    length: float

    def other(self, v: str) -> str:
        if v == self.start:
            return self.end
        if v == self.end:
            return self.start
        raise ValueError(f"vertex {v!r} is not an endpoint of edge {self.id!r}")

    def reversed(self) -> "Edge":
        return Edge(self.id, self.end, self.start, self.length)


@dataclass(frozen=True)
class MetricTree:
    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]
    boundary: tuple[str, ...]
    clamped: str

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "boundary", tuple(self.boundary))

    @property
    def edge_map(self) -> dict[str, Edge]:
        return {e.id: e for e in self.edges}

    def edge(self, edge_id: str) -> Edge:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise KeyError(f"unknown edge {edge_id!r}")

    def incident(self, v: str) -> list[Edge]:
        return [e for e in self.edges if v in (e.start, e.end)]

    def degree(self, v: str) -> int:
        return sum((e.start == v) + (e.end == v) for e in self.edges)

    def leaf_edge(self, v: str) -> Edge:
        inc = self.incident(v)
        if len(inc) != 1:
            raise ValueError(f"vertex {v!r} is not a leaf")
        return inc[0]

    @property
    def internal_vertices(self) -> list[str]:
        return [v for v in self.vertices if self.degree(v) > 1]

    @property
    def total_length(self) -> float:
        return float(sum(e.length for e in self.edges))

    def adjacency(self) -> dict[str, list[tuple[str, Edge]]]:
        adj: dict[str, list[tuple[str, Edge]]] = {v: [] for v in self.vertices}
        for e in self.edges:
            adj.setdefault(e.start, []).append((e.end, e))
            adj.setdefault(e.end, []).append((e.start, e))
        return adj


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def kinds(self) -> set[str]:
        return {v.split(":", 1)[0] for v in self.violations}


@dataclass(frozen=True, eq=False)
class EdgePotential:
    """Samples of ``p`` and ``q`` on the uniform grid ``0, h, ..., length``."""

    edge: str
    h: float
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape or p.ndim != 1 or p.size < 2:
            raise ValueError("p and q must be 1-D arrays of equal length >= 2")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError(f"non-finite potential samples on edge {self.edge!r}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def zero(cls, edge: str, length: float, h: float) -> "EdgePotential":
        n = int(round(length / h)) + 1
        return cls(edge, h, np.zeros(n), np.zeros(n))

    @classmethod
    def from_functions(cls, edge: str, length: float, h: float, p, q) -> "EdgePotential":
        x = np.linspace(0.0, length, int(round(length / h)) + 1)
        return cls(edge, h, np.broadcast_to(p(x), x.shape).copy(), np.broadcast_to(q(x), x.shape).copy())

    @property
    def length(self) -> float:
        return self.h * (self.p.size - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.p.size)

    def _spline(self, values):
        return CubicSpline(self.x, values)

    def at(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Cubic interpolation of ``(p, q)``; exact at the sample nodes."""
        x = np.asarray(x, dtype=float)
        return self._spline(self.p)(x), self._spline(self.q)(x)

    def resample(self, h: float) -> "EdgePotential":
        n = int(round(self.length / h)) + 1
        x = np.linspace(0.0, self.length, n)
        p, q = self.at(x)
        return EdgePotential(self.edge, self.length / (n - 1), p, q)

    def reversed(self) -> "EdgePotential":
        # x -> l - x maps (psi1, psi2) -> (psi1, -psi2) and (p, q) -> (p, -q)
        return EdgePotential(self.edge, self.h, self.p[::-1].copy(), -self.q[::-1])

    def sup(self) -> float:
        return float(max(np.max(np.abs(self.p)), np.max(np.abs(self.q))))

    def __eq__(self, other):
        if not isinstance(other, EdgePotential):
            return NotImplemented
        return (
            self.edge == other.edge
            and self.h == other.h
            and np.array_equal(self.p, other.p)
            and np.array_equal(self.q, other.q)
        )


def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def validate(tree: MetricTree, check_orientation: bool = True) -> ValidationReport:
    """Check every structural assumption; never raises."""
    rep = ValidationReport()
    verts = list(tree.vertices)
    vset = set(verts)
    if len(vset) != len(verts):
        rep.violations.append("vertices: duplicate vertex identifiers")
    ids = [e.id for e in tree.edges]
    if len(set(ids)) != len(ids):
        rep.violations.append("edges: duplicate edge identifiers")

    parent = {v: v for v in vset}
    for e in tree.edges:
        if e.start not in vset or e.end not in vset:
            rep.violations.append(f"unknown-vertex: edge {e.id} references an unknown vertex")
            continue
        if not (e.length > 0 and np.isfinite(e.length)):
            rep.violations.append(f"length: edge {e.id} has non-positive length {e.length}")
        if e.start == e.end:
            rep.violations.append(f"acyclicity: edge {e.id} is a loop")
            continue
        ra, rb = _find(parent, e.start), _find(parent, e.end)
        if ra == rb:
            rep.violations.append(f"acyclicity: edge {e.id} closes a cycle")
        else:
            parent[ra] = rb
    if vset and len({_find(parent, v) for v in vset}) != 1:
        rep.violations.append("connectivity: graph is not connected")
    if len(tree.edges) != len(verts) - 1:
        rep.violations.append(
            f"edge-count: {len(tree.edges)} edges for {len(verts)} vertices"
        )
    if rep.kinds() & {"unknown-vertex"}:
        return rep

    leaves = {v for v in vset if tree.degree(v) == 1}
    if tree.clamped not in vset or tree.degree(tree.clamped) != 1:
        rep.violations.append(f"clamped-degree: clamped vertex {tree.clamped!r} must be a leaf")
    for v in tree.boundary:
        if v not in vset or tree.degree(v) != 1:
            rep.violations.append(f"boundary-degree: boundary vertex {v!r} must be a leaf")
    if len(set(tree.boundary)) != len(tree.boundary):
        rep.violations.append("boundary-set: repeated boundary vertex")
    if tree.clamped in tree.boundary:
        rep.violations.append("boundary-set: clamped vertex listed in the boundary")
    if leaves - {tree.clamped} != set(tree.boundary):
        rep.violations.append("boundary-set: boundary must list every leaf except the clamped one")
    for v in verts:
        d = tree.degree(v)
        if d == 2:
            rep.violations.append(f"internal-degree: vertex {v!r} has degree 2")
        if d == 0 and len(verts) > 1:
            rep.violations.append(f"connectivity: isolated vertex {v!r}")

    if check_orientation:
        for v in verts:
            inc = tree.incident(v)
            if len(inc) < 2:
                continue
            starts = sum(e.start == v for e in inc)
            if 0 < starts < len(inc):
                rep.violations.append(f"orientation: edges at {v!r} mix starts and ends")
        if tree.clamped in vset and tree.degree(tree.clamped) == 1:
            if tree.leaf_edge(tree.clamped).start != tree.clamped:
                rep.violations.append("clamped-orientation: clamped vertex must start its edge")
    return rep


def depths(tree: MetricTree, root: str | None = None) -> dict[str, int]:
    """Edge-count distance from ``root`` (default: the clamped vertex)."""
    root = tree.clamped if root is None else root
    adj = tree.adjacency()
    depth = {root: 0}
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for w, _ in adj[v]:
            if w not in depth:
                depth[w] = depth[v] + 1
                queue.append(w)
    return depth


def orient_edges(tree: MetricTree) -> MetricTree:
    """Orient every edge from its even-depth to its odd-depth endpoint.

    Depth parity from the clamped vertex makes each vertex either a pure start
    or a pure end point, and the clamped vertex starts its edge.
    """
    depth = depths(tree)
    edges = []
    for e in tree.edges:
        edges.append(e if depth[e.start] % 2 == 0 else e.reversed())
    return MetricTree(tree.vertices, tuple(edges), tree.boundary, tree.clamped)


def orient_instance(
    tree: MetricTree, potentials: Mapping[str, EdgePotential]
) -> tuple[MetricTree, dict[str, EdgePotential]]:
    """``orient_edges`` plus the matching coordinate flip of the potentials."""
    oriented = orient_edges(tree)
    old = tree.edge_map
    pots = {}
    for e in oriented.edges:
        pot = potentials[e.id]
        pots[e.id] = pot if old[e.id].start == e.start else pot.reversed()
    return oriented, pots


def path_edges(tree: MetricTree, a: str, b: str) -> list[Edge]:
    adj = tree.adjacency()
    if a not in adj or b not in adj:
        raise KeyError(f"unknown vertex {a if a not in adj else b!r}")
    prev: dict[str, tuple[str, Edge] | None] = {a: None}
    queue = deque([a])
    while queue:
        v = queue.popleft()
        if v == b:
            break
        for w, e in adj[v]:
            if w not in prev:
                prev[w] = (v, e)
                queue.append(w)
    out = []
    v = b
    while prev[v] is not None:
        u, e = prev[v]
        out.append(e)
        v = u
    return out[::-1]


def path_distance(tree: MetricTree, a: str, b: str) -> float:
    return float(sum(e.length for e in path_edges(tree, a, b)))


def _clusters(tree: MetricTree) -> tuple[dict[str, frozenset], dict[str, str]]:
    """Boundary-position set below each vertex, rooted at the clamped leaf."""
    pos = {v: i for i, v in enumerate(tree.boundary)}
    adj = tree.adjacency()
    parent_edge: dict[str, str] = {}
    order = []
    seen = {tree.clamped}
    stack = [tree.clamped]
    while stack:
        v = stack.pop()
        order.append(v)
        for w, e in adj[v]:
            if w not in seen:
                seen.add(w)
                parent_edge[w] = e.id
                stack.append(w)
    below: dict[str, set] = {v: set() for v in tree.vertices}
    children = {v: [] for v in tree.vertices}
    for w, eid in parent_edge.items():
        children[tree.edge(eid).other(w)].append(w)
    for v in reversed(order):
        if v in pos:
            below[v].add(pos[v])
        for c in children[v]:
            below[v] |= below[c]
    return {v: frozenset(s) for v, s in below.items()}, parent_edge


def tree_equivalent(
    t1: MetricTree, t2: MetricTree, tol: float = 1e-9
) -> tuple[bool, dict[str, str]]:
    """Isomorphism fixing boundary positions and the clamped vertex.

    Without degree-2 vertices every vertex is pinned down by the set of
    boundary positions below it, so the mapping is unique when it exists.
    """
    if len(t1.boundary) != len(t2.boundary) or len(t1.vertices) != len(t2.vertices):
        return False, {}
    c1, pe1 = _clusters(t1)
    c2, pe2 = _clusters(t2)
    inv2 = {}
    for v, s in c2.items():
        if v == t2.clamped:
            continue
        if s in inv2:
            return False, {}
        inv2[s] = v
    mapping = {t1.clamped: t2.clamped}
    for v, s in c1.items():
        if v == t1.clamped:
            continue
        if s not in inv2:
            return False, {}
        mapping[v] = inv2[s]
    if len(set(mapping.values())) != len(mapping):
        return False, {}
    e2 = t2.edge_map
    e1 = t1.edge_map
    for v, eid in pe1.items():
        w = mapping[v]
        if w not in pe2:
            return False, {}
        other1 = e1[eid].other(v)
        other2 = e2[pe2[w]].other(w)
        if mapping[other1] != other2:
            return False, {}
        if abs(e1[eid].length - e2[pe2[w]].length) > tol:
            return False, mapping
    return True, mapping


def edge_correspondence(
    t1: MetricTree, t2: MetricTree, mapping: Mapping[str, str]
) -> dict[str, tuple[str, bool]]:
    """For each edge of ``t1``: matching ``t2`` edge and whether it is flipped."""
    by_ends = {}
    for e in t2.edges:
        by_ends[(e.start, e.end)] = (e.id, False)
        by_ends[(e.end, e.start)] = (e.id, True)
    return {e.id: by_ends[(mapping[e.start], mapping[e.end])] for e in t1.edges}


def _trig_profile(rng: np.random.Generator, x: np.ndarray, order: int) -> np.ndarray:
    out = np.full_like(x, rng.normal())
    for k in range(1, order + 1):
        a, b = rng.normal(size=2) / k
        out = out + a * np.cos(k * x) + b * np.sin(k * x)
    return out


def generate_instance(
    seed: int,
    max_edges: int,
    base_step: float = 0.01,
    amplitude: float = 0.5,
    length_range: tuple[float, float] = (0.3, 1.0),
    order: int = 2,
) -> tuple[MetricTree, dict[str, EdgePotential]]:
    """Random oriented tree with at most ``max_edges`` edges.

    Internal degrees are at least 3, lengths are integer multiples of
    ``base_step`` and each edge carries a trigonometric potential whose sup
    norm lies in ``[amplitude / 2, amplitude]``.
    """
    if max_edges < 1:
        raise ValueError("max_edges must be >= 1")
    if base_step <= 0 or amplitude < 0:
        raise ValueError("base_step must be positive and amplitude non-negative")
    lo, hi = (int(round(length_range[0] / base_step)), int(round(length_range[1] / base_step)))
    if lo < 1 or hi < lo:
        raise ValueError("length_range does not contain a positive multiple of base_step")
    rng = np.random.default_rng(seed)

    counter = {"b": 0, "n": 0}

    def new(kind):
        counter[kind] += 1
        return f"{kind}{counter[kind]}"

    links: list[tuple[str, str]] = []
    if max_edges < 3:
        # no vertex of degree >= 3 fits: a single edge is the only legal tree
        links.append(("root", new("b")))
    else:
        center = new("n")
        links.append(("root", center))
        for _ in range(int(rng.integers(2, min(max_edges, 4)))):
            links.append((center, new("b")))
        while len(links) + 2 <= max_edges and rng.random() < 0.85:
            leaves = [w for (_, w) in links if w.startswith("b")]
            leaf = leaves[int(rng.integers(len(leaves)))]
            room = max_edges - len(links)
            k = int(rng.integers(2, min(room, 3) + 1))
            inner = new("n")
            links = [(u, inner if w == leaf else w) for (u, w) in links]
            for _ in range(k):
                links.append((inner, new("b")))

    vertices = ["root"] + [w for (_, w) in links]
    boundary = sorted((w for w in vertices if w.startswith("b")), key=lambda s: int(s[1:]))
    edges = []
    for i, (u, w) in enumerate(links):
        n = int(rng.integers(lo, hi + 1))
        edges.append(Edge(f"e{i + 1}", u, w, n * base_step))
    tree, _ = orient_instance(
        MetricTree(tuple(vertices), tuple(edges), tuple(boundary), "root"),
        {e.id: EdgePotential.zero(e.id, e.length, base_step) for e in edges},
    )

    potentials = {}
    for e in tree.edges:
        x = np.linspace(0.0, e.length, int(round(e.length / base_step)) + 1)
        p = _trig_profile(rng, x, order)
        q = _trig_profile(rng, x, order)
        scale = max(np.max(np.abs(p)), np.max(np.abs(q)), 1e-300)
        target = amplitude * rng.uniform(0.5, 1.0)
        potentials[e.id] = EdgePotential(e.id, base_step, p * target / scale, q * target / scale)
    return tree, potentials


def star(lengths: Iterable[float], clamped_length: float | None = None) -> MetricTree:
    """Star whose first ``len(lengths)`` leaves are the boundary.

    With ``clamped_length`` the clamped leaf hangs on the center as an extra
    edge; otherwise the last length is used for the clamped edge.
    """
    lengths = list(lengths)
    if clamped_length is None:
        clamped_length = lengths.pop()
    edges = [Edge("e0", "root", "c", clamped_length)]
    boundary = []
    for i, l in enumerate(lengths, 1):
        edges.append(Edge(f"e{i}", f"b{i}", "c", l))
        boundary.append(f"b{i}")
    return orient_edges(MetricTree(("root", "c", *boundary), tuple(edges), tuple(boundary), "root"))


def single_edge(length: float) -> MetricTree:
    return MetricTree(("root", "b1"), (Edge("e1", "root", "b1", length),), ("b1",), "root")
