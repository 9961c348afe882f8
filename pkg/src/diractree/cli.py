"""Command line front end: ``diractree {gen,forward,invert,roundtrip,halfline}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from diractree import io
from diractree.bridge import periodic_grid, response_to_tw
from diractree.config import OUT_ENV, ConfigError, RunConfig
from diractree.forward_time import TimeGrid, extract_response
from diractree.halfline import build_connecting_kernel, check_positive_definite, recover_potential
from diractree.peeling import ReconstructConfig, compare_reconstruction, reconstruct
from diractree.spectral import SpectralGrid, TWSamples, tw_samples
from diractree.tree import generate_instance, validate

log = logging.getLogger("diractree")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _range(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from exc
    return a, b


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tau", type=float, default=0.01, help="time and space step")
    common.add_argument("--horizon", type=float, default=None, help="response horizon T (default 2 L + 0.3)")
    common.add_argument("--lambda-count", type=int, default=256)
    common.add_argument("--lambda-range", type=_range, default=(-40.0, 40.0), help="'lo,hi' for Re lambda")
    common.add_argument("--eps", type=float, default=1.0, help="Im lambda of the spectral line")
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--edges", type=int, default=8, help="edge-count bound for generated trees")
    common.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUT_ENV} or ./diractree-out)")
    common.add_argument("--dump-intermediate", action="store_true", help="write per-iteration data")
    common.add_argument("--method", choices=("time", "spectral"), default="time", help="peeling route")
    common.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    p = argparse.ArgumentParser(prog="diractree", description="Dirac systems on metric trees: forward and inverse.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate an instance from a seed")
    f = sub.add_parser("forward", parents=[common], help="instance -> response matrix and TW samples")
    f.add_argument("instance", type=Path)
    f.add_argument("--skip-tw", action="store_true", help="only the response matrix")
    f.add_argument(
        "--periodic-tw",
        action="store_true",
        help="also write TW samples of the response on a full-period grid (exactly invertible)",
    )
    inv = sub.add_parser("invert", parents=[common], help="response bundle or TW CSV -> reconstruction")
    inv.add_argument("data", type=Path)
    inv.add_argument("--truth", type=Path, default=None, help="instance JSON to compare against")
    sub.add_parser("roundtrip", parents=[common], help="gen + forward + invert + compare")
    h = sub.add_parser("halfline", parents=[common], help="response function CSV -> p, q CSV")
    h.add_argument("rfile", type=Path)
    return p


def config_from_args(args) -> RunConfig:
    kw = dict(
        tau=args.tau,
        horizon=args.horizon,
        lambda_count=args.lambda_count,
        lambda_range=args.lambda_range,
        eps=args.eps,
        seed=args.seed,
        edges=args.edges,
        dump_intermediate=args.dump_intermediate,
        method=args.method,
        plots=not args.no_plots,
    )
    if args.out is not None:
        kw["out"] = args.out
    return RunConfig(**kw)


def _summary(cfg: RunConfig, command: str, **fields) -> dict:
    return {"command": command, "config": cfg.to_dict(), **fields, "meta": {"finished": time.strftime("%Y-%m-%dT%H:%M:%S")}}


def _plot(cfg: RunConfig, fn, *args):
    if not cfg.plots:
        return
    try:
        fn(*args)
    except Exception as exc:  # figures never fail a run
        log.warning("figure %s skipped: %s", args[-1], exc)


def cmd_gen(cfg: RunConfig) -> dict:
    tree, pots = generate_instance(cfg.seed, cfg.edges, base_step=cfg.tau, amplitude=cfg.amplitude)
    path = cfg.out / "instance.json"
    io.write_instance(path, tree, pots)
    if cfg.plots:
        from diractree import plotting

        _plot(cfg, plotting.tree_figure, tree, cfg.out / "instance_tree.png")
    return {"instance": str(path), "edges": len(tree.edges), "boundary": list(tree.boundary)}


def forward(cfg: RunConfig, tree, pots, tag: str = "", with_tw: bool = True, periodic_tw: bool = False) -> dict:
    rep = validate(tree)
    if not rep.ok:
        raise StageError("validate", "; ".join(str(v) for v in rep.violations))
    horizon = cfg.horizon_for(tree.total_length)
    try:
        R = extract_response(tree, pots, TimeGrid(cfg.tau, horizon))
    except ValueError as exc:
        raise StageError("forward-time", str(exc)) from exc
    out = {}
    rpath = cfg.out / f"{tag}response.json"
    io.write_response(rpath, R)
    out["response"] = str(rpath)
    if cfg.plots:
        from diractree import plotting

        _plot(cfg, plotting.response_figure, R, cfg.out / f"{tag}response.png")
    if with_tw:
        grid = SpectralGrid.line(cfg.lambda_count, cfg.lambda_range, cfg.eps)
        try:
            tw = tw_samples(tree, pots, grid)
        except Exception as exc:
            raise StageError("forward-spectral", str(exc)) from exc
        tw.meta.update({"horizon": horizon, "tau": cfg.tau})
        tpath = cfg.out / f"{tag}tw.csv"
        io.write_tw(tpath, tw)
        out["tw"] = str(tpath)
        if cfg.plots:
            from diractree import plotting

            _plot(cfg, plotting.tw_figure, tw, cfg.out / f"{tag}tw.png")
    if periodic_tw:
        ptw = response_to_tw(R, periodic_grid(cfg.tau, R.steps, cfg.eps))
        ptw.meta["source"] = "transform of the response matrix"
        ppath = cfg.out / f"{tag}tw_periodic.csv"
        io.write_tw(ppath, ptw)
        out["tw_periodic"] = str(ppath)
    out["horizon"] = horizon
    out["_R"] = R
    return out


def _dumper(cfg: RunConfig):
    if not cfg.dump_intermediate:
        return None
    d = cfg.out / "intermediate"
    d.mkdir(parents=True, exist_ok=True)

    def dump(stage, it, obj):
        if stage == "response":
            io.write_response(d / f"iter{it:02d}_response.json", obj)
        elif stage == "topology":
            io.write_json(d / f"iter{it:02d}_topology.json", obj.to_dict())

    return dump


def invert(cfg: RunConfig, data, truth=None, tag: str = "") -> dict:
    rc = ReconstructConfig(method=cfg.method, degree_tol=cfg.degree_tol, lambda_eps=cfg.eps)
    rep = reconstruct(data, rc, dump=_dumper(cfg))
    out = {"iterations": rep.iterations, "reconstruct_config": rep.config}
    if not rep.ok:
        io.write_json(cfg.out / f"{tag}report.json", {"error": rep.error, **out})
        raise StageError("invert", rep.error or "reconstruction failed")
    ipath = cfg.out / f"{tag}recovered_instance.json"
    io.write_instance(ipath, rep.tree, rep.potentials)
    pdir = cfg.out / f"{tag}potentials"
    pdir.mkdir(exist_ok=True)
    for eid, pot in sorted(rep.potentials.items()):
        io.write_potential(pdir / f"{eid}.csv", pot)
    out["recovered_instance"] = str(ipath)
    out["edges"] = [{"id": e.id, "start": e.start, "end": e.end, "length": e.length} for e in rep.tree.edges]
    if truth is not None:
        ttree, tpots = truth
        metrics = compare_reconstruction(ttree, tpots, rep.tree, rep.potentials)
        tol_len = cfg.length_tol if cfg.length_tol is not None else cfg.tau
        metrics["thresholds"] = {"length": tol_len, "potential_linf": cfg.potential_tol}
        metrics["pass"] = bool(
            metrics["isomorphic"]
            and metrics.get("max_length_error", np.inf) <= tol_len + 1e-12
            and metrics.get("max_potential_linf", np.inf) <= cfg.potential_tol
        )
        out["metrics"] = metrics
    io.write_json(cfg.out / f"{tag}report.json", out)
    if cfg.plots:
        from diractree import plotting

        _plot(cfg, plotting.tree_figure, rep.tree, cfg.out / f"{tag}recovered_tree.png")
        rec = {eid: (p.x, p.p, p.q) for eid, p in rep.potentials.items()}
        tr = None
        if truth is not None and out["metrics"]["isomorphic"]:
            tr = {}
            for te, info in out["metrics"]["edges"].items():
                tp = truth[1].get(te)
                if tp is None:
                    continue
                tp = tp.reversed() if info["flipped"] else tp
                tr[info["match"]] = (tp.x, tp.p, tp.q)
        _plot(cfg, plotting.potentials_figure, rec, cfg.out / f"{tag}potentials.png", tr)
    return out


def cmd_invert(cfg: RunConfig, path: Path, truth_path: Path | None) -> dict:
    if path.suffix == ".csv":
        data: object = io.read_tw(path)
        assert isinstance(data, TWSamples)
        if "tau" not in data.meta:
            data.meta["tau"] = cfg.tau
        if "horizon" not in data.meta and cfg.horizon is not None:
            data.meta["horizon"] = cfg.horizon
    else:
        data = io.read_response(path)
    truth = io.read_instance(truth_path) if truth_path else None
    return invert(cfg, data, truth)


def cmd_roundtrip(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    tree, pots = generate_instance(cfg.seed, cfg.edges, base_step=cfg.tau, amplitude=cfg.amplitude)
    io.write_instance(cfg.out / "instance.json", tree, pots)
    fw = forward(cfg, tree, pots, with_tw=True)
    R = fw.pop("_R")
    res = invert(cfg, R, truth=(tree, pots))
    res["forward"] = fw
    res["seconds"] = time.perf_counter() - t0
    if not res["metrics"]["pass"]:
        raise StageError("compare", json.dumps({k: res["metrics"].get(k) for k in ("isomorphic", "max_length_error", "max_potential_linf")}))
    return res


def cmd_halfline(cfg: RunConfig, path: Path) -> dict:
    r = io.read_response_function(path)
    rec = recover_potential(r, check=True)
    io.write_potential(cfg.out / "halfline_potential.csv", rec)
    lam = check_positive_definite(build_connecting_kernel(r))
    adm = {"min_eigenvalue": lam, "admissible": bool(lam > 0), "T": r.T, "tau": r.tau}
    io.write_json(cfg.out / "admissibility.json", adm)
    if cfg.plots:
        from diractree import plotting

        _plot(cfg, plotting.potentials_figure, {"halfline": (rec.x, rec.p, rec.q)}, cfg.out / "halfline_potential.png")
    return adm


def run_subcommand(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    cfg.out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "gen":
            res = cmd_gen(cfg)
        elif args.command == "forward":
            tree, pots = io.read_instance(args.instance)
            res = forward(cfg, tree, pots, with_tw=not args.skip_tw, periodic_tw=args.periodic_tw)
            res.pop("_R")
        elif args.command == "invert":
            res = cmd_invert(cfg, args.data, args.truth)
        elif args.command == "roundtrip":
            res = cmd_roundtrip(cfg)
        else:
            res = cmd_halfline(cfg, args.rfile)
    except io.ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 3
    except StageError as exc:
        io.write_json(cfg.out / "summary.json", _summary(cfg, args.command, status="error", error=str(exc)))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    io.write_json(cfg.out / "summary.json", _summary(cfg, args.command, status="ok", result=res))
    print(json.dumps({"status": "ok", "command": args.command, "out": str(cfg.out)}))
    return 0


def main():
    sys.exit(run_subcommand())


if __name__ == "__main__":
    main()
