"""File formats.

* instance JSON: ``{vertices, edges: [{id, start, end, length}], clamped,
  boundary, potentials: {edge_id: {h, p, q}}}``; unknown fields are rejected.
* response bundle JSON: ``tau``, ``T``, size, labels and per pair a spike
  table ``[t, Re a, Im a]`` and the regular samples as ``[Re, Im]`` pairs.
* TW CSV: ``re_lambda, im_lambda, i, j, re_M, im_M`` (rows ``M[k, i, j]``).
* potential CSV: ``x, p, q``; response function CSV: ``t, re_r, im_r``.

Floats are written with ``repr`` so every format round-trips bit for bit.
Each file carries a format name and version.
"""

from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from diractree.forward_time import ResponseMatrix
from diractree.halfline import RecoveredPotential, ResponseFunction
from diractree.spectral import SpectralGrid, TWSamples
from diractree.tree import Edge, EdgePotential, MetricTree

VERSION = 1


class ParseError(ValueError):
    pass


def _check_fields(obj, allowed: set, required: set, where: str):
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    for k in obj:
        if k not in allowed:
            raise ParseError(f"{where}: unknown field {k!r}")
    for k in required:
        if k not in obj:
            raise ParseError(f"{where}: missing field {k!r}")


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _write_text(path, text: str):
    Path(path).write_text(text, encoding="utf-8")


# --- instance ----------------------------------------------------------------


def instance_to_dict(tree: MetricTree, potentials=None) -> dict:
    pots = potentials or {}
    return {
        "vertices": list(tree.vertices),
        "edges": [{"id": e.id, "start": e.start, "end": e.end, "length": e.length} for e in tree.edges],
        "clamped": tree.clamped,
        "boundary": list(tree.boundary),
        "potentials": {
            eid: {"h": pot.h, "p": pot.p.tolist(), "q": pot.q.tolist()}
            for eid, pot in sorted(pots.items())
        },
    }


def instance_from_dict(d: dict) -> tuple[MetricTree, dict[str, EdgePotential]]:
    top = {"vertices", "edges", "clamped", "boundary", "potentials"}
    _check_fields(d, top | {"format", "version"}, top - {"potentials"}, "instance")
    if d.get("version", VERSION) != VERSION:
        raise ParseError(f"instance: unsupported version {d.get('version')!r}")
    edges = []
    for k, e in enumerate(d["edges"]):
        where = f"edges[{k}]"
        _check_fields(e, {"id", "start", "end", "length"}, {"id", "start", "end", "length"}, where)
        edges.append(Edge(str(e["id"]), str(e["start"]), str(e["end"]), _number(e["length"], where + ".length")))
    tree = MetricTree(tuple(map(str, d["vertices"])), tuple(edges), tuple(map(str, d["boundary"])), str(d["clamped"]))
    known = {e.id for e in edges}
    pots = {}
    for eid, pd in (d.get("potentials") or {}).items():
        where = f"potentials[{eid!r}]"
        if eid not in known:
            raise ParseError(f"{where}: no such edge")
        _check_fields(pd, {"h", "p", "q"}, {"h", "p", "q"}, where)
        try:
            pots[eid] = EdgePotential(eid, _number(pd["h"], where + ".h"), pd["p"], pd["q"])
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from exc
    return tree, pots


def write_instance(path, tree: MetricTree, potentials=None):
    d = {"format": "diractree-instance", "version": VERSION, **instance_to_dict(tree, potentials)}
    _write_text(path, json.dumps(d, indent=1) + "\n")


def read_instance(path) -> tuple[MetricTree, dict[str, EdgePotential]]:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return instance_from_dict(d)


# --- response bundle ---------------------------------------------------------


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def response_to_dict(R: ResponseMatrix) -> dict:
    pairs = []
    for i in range(R.size):
        for j in range(R.size):
            reg = R.regular[i, j]
            pairs.append(
                {
                    "i": i,
                    "j": j,
                    "spikes": [[t, a.real, a.imag] for t, a in R.spikes[i][j]],
                    "regular": np.stack([reg.real, reg.imag], axis=1).tolist(),
                }
            )
    return {
        "format": "diractree-response",
        "version": VERSION,
        "tau": R.tau,
        "T": R.horizon,
        "size": R.size,
        "labels": list(R.labels),
        "leading": [R.leading.real, R.leading.imag],
        "pairs": pairs,
        "meta": _jsonable(R.meta),
    }


def response_from_dict(d: dict) -> ResponseMatrix:
    allowed = {"format", "version", "tau", "T", "size", "labels", "leading", "pairs", "meta"}
    _check_fields(d, allowed, allowed - {"meta", "leading"}, "response")
    if d["version"] != VERSION:
        raise ParseError(f"response: unsupported version {d['version']!r}")
    m = int(d["size"])
    tau = _number(d["tau"], "response.tau")
    if len(d["labels"]) != m:
        raise ParseError("response: label count does not match size")
    n = int(round(_number(d["T"], "response.T") / tau)) + 1
    spikes = [[[] for _ in range(m)] for _ in range(m)]
    regular = np.zeros((m, m, n), dtype=complex)
    seen = set()
    for k, pr in enumerate(d["pairs"]):
        where = f"pairs[{k}]"
        _check_fields(pr, {"i", "j", "spikes", "regular"}, {"i", "j", "spikes", "regular"}, where)
        i, j = int(pr["i"]), int(pr["j"])
        if not (0 <= i < m and 0 <= j < m) or (i, j) in seen:
            raise ParseError(f"{where}: bad or repeated index ({i}, {j})")
        seen.add((i, j))
        spikes[i][j] = [(float(t), complex(float(a), float(b))) for t, a, b in pr["spikes"]]
        reg = np.asarray(pr["regular"], dtype=float)
        if reg.shape != (n, 2):
            raise ParseError(f"{where}.regular: expected {n} samples, got {reg.shape[0] if reg.ndim else 0}")
        regular[i, j] = reg[:, 0] + 1j * reg[:, 1]
    if len(seen) != m * m:
        raise ParseError(f"response: {m * m - len(seen)} pairs missing")
    lead = d.get("leading", [0.0, 1.0])
    return ResponseMatrix(tau, tuple(d["labels"]), spikes, regular, complex(lead[0], lead[1]), dict(d.get("meta") or {}))


def write_response(path, R: ResponseMatrix):
    _write_text(path, json.dumps(response_to_dict(R)) + "\n")


def read_response(path) -> ResponseMatrix:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return response_from_dict(d)


# --- CSV helpers -------------------------------------------------------------


def _csv_with_header(header: dict, columns: list[str], rows) -> str:
    buf = _io.StringIO()
    buf.write("# " + json.dumps(header) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _read_csv(path, columns: list[str], fmt: str):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ParseError(f"{path}: line 1: missing header")
    try:
        header = json.loads(lines[0][2:])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line 1: {exc.msg}") from exc
    if header.get("format") != fmt or header.get("version") != VERSION:
        raise ParseError(f"{path}: line 1: expected format {fmt!r} version {VERSION}")
    rows = list(csv.reader(lines[1:]))
    if not rows or rows[0] != columns:
        raise ParseError(f"{path}: line 2: expected columns {columns}")
    out = []
    for k, r in enumerate(rows[1:], start=3):
        if len(r) != len(columns):
            raise ParseError(f"{path}: line {k}: expected {len(columns)} fields, got {len(r)}")
        try:
            out.append([float(x) for x in r])
        except ValueError as exc:
            raise ParseError(f"{path}: line {k}: {exc}") from exc
    return header, np.array(out).reshape(-1, len(columns))


TW_COLUMNS = ["re_lambda", "im_lambda", "i", "j", "re_M", "im_M"]


def write_tw(path, tw: TWSamples):
    rows = []
    for k, lam in enumerate(tw.grid.points):
        for i in range(tw.size):
            for j in range(tw.size):
                z = tw.M[k, i, j]
                rows.append([float(lam.real), float(lam.imag), i, j, float(z.real), float(z.imag)])
    header = {"format": "diractree-tw", "version": VERSION, "labels": list(tw.labels), "meta": _jsonable(tw.meta)}
    _write_text(path, _csv_with_header(header, TW_COLUMNS, rows))


def read_tw(path) -> TWSamples:
    header, a = _read_csv(path, TW_COLUMNS, "diractree-tw")
    labels = tuple(header.get("labels", []))
    m = len(labels)
    if a.shape[0] % max(m * m, 1):
        raise ParseError(f"{path}: row count is not a multiple of {m}x{m}")
    nl = a.shape[0] // (m * m)
    a = a.reshape(nl, m, m, 6)
    if not (np.all(a[:, :, :, 2] == np.arange(m)[None, :, None]) and np.all(a[:, :, :, 3] == np.arange(m)[None, None, :])):
        raise ParseError(f"{path}: rows must be ordered by lambda, i, j")
    lam = a[:, 0, 0, 0] + 1j * a[:, 0, 0, 1]
    M = a[:, :, :, 4] + 1j * a[:, :, :, 5]
    return TWSamples(SpectralGrid(lam), M, labels, dict(header.get("meta") or {}))


POT_COLUMNS = ["x", "p", "q"]


def write_potential(path, pot: EdgePotential | RecoveredPotential, extra: dict | None = None):
    if isinstance(pot, EdgePotential):
        x, p, q = pot.x, pot.p, pot.q
        header = {"format": "diractree-potential", "version": VERSION, "edge": pot.edge, "h": pot.h}
    else:
        x, p, q = pot.x, pot.p, pot.q
        header = {"format": "diractree-potential", "version": VERSION, "min_eigenvalue": pot.min_eigenvalue}
    header.update(extra or {})
    _write_text(path, _csv_with_header(header, POT_COLUMNS, zip(map(float, x), map(float, p), map(float, q))))


def read_potential(path) -> tuple[dict, np.ndarray, np.ndarray, np.ndarray]:
    header, a = _read_csv(path, POT_COLUMNS, "diractree-potential")
    return header, a[:, 0], a[:, 1], a[:, 2]


R_COLUMNS = ["t", "re_r", "im_r"]


def write_response_function(path, r: ResponseFunction):
    t = r.tau * np.arange(r.r.size)
    header = {"format": "diractree-rfun", "version": VERSION, "tau": r.tau}
    _write_text(path, _csv_with_header(header, R_COLUMNS, zip(map(float, t), map(float, r.r.real), map(float, r.r.imag))))


def read_response_function(path) -> ResponseFunction:
    header, a = _read_csv(path, R_COLUMNS, "diractree-rfun")
    tau = header.get("tau")
    if not isinstance(tau, (int, float)):
        raise ParseError(f"{path}: line 1: header needs a numeric 'tau'")
    try:
        return ResponseFunction(float(tau), a[:, 1] + 1j * a[:, 2])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_json(path, obj):
    _write_text(path, json.dumps(_jsonable(obj), indent=1) + "\n")
