"""Command line front end: ``topogap <command> --config run.toml [--out DIR]``.

Exit codes: 0 on success, 1 on a domain error (a JSON error record is written to
stderr), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gridfile, tables
from .bloch import band_structure, gap_report, grid_solutions
from .config import parse_config
from .errors import TopogapError, ValidationError
from .lattice import high_symmetry_path, k_grid
from .topo import chern, curvature_field, plaquette_corners, plaquette_curvature, valley_integrals, wilson_loop

log = logging.getLogger("topogap")

COMMANDS = ("bands", "curvature", "chern", "valley-chern", "wilson", "optimize", "edge", "validate")
THREADS_ENV = "TOPOGAP_THREADS"


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_plain) + "\n")


def _plain(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(type(v))


class _Run:
    def __init__(self, cfg, out, workers):
        self.cfg, self.out, self.workers = cfg, out, workers
        self.lattice = cfg.lattice_obj()
        self._fields = None

    @property
    def fields(self):
        if self._fields is None:
            self._fields = self.cfg.fields()
        return self._fields

    def grid(self):
        return k_grid(self.lattice, self.cfg.Nk)

    def grid_solutions(self, q):
        return [grid_solutions(f, self.grid(), q, self.workers, self.cfg.seed) for f in self.fields]


def cmd_bands(run: _Run):
    cfg = run.cfg
    path = high_symmetry_path(run.lattice, cfg.path_samples)
    q = cfg.m + 1
    rows, sols = [], []
    for c, f in enumerate(run.fields, start=1):
        bs = band_structure(f, path, q, run.workers, cfg.seed)
        sols.append(bs)
        for b in bs:
            for j, lam in enumerate(b.eigenvalues, start=1):
                rows.append((c, b.kappa[0], b.kappa[1], j, lam, np.sqrt(max(lam, 0.0))))
    tables.write_table(run.out / "bands.tsv", ["crystal", "kx", "ky", "band", "lambda", "omega"], rows)
    gs = run.grid_solutions(q)
    rep = gap_report(list(gs[0].ravel()) + sols[0], list(gs[1].ravel()) + sols[1], cfg.m)
    _write_json(run.out / "gap.json", rep.as_dict())
    return rep.as_dict()


def _curvatures(run):
    gs = run.grid_solutions(run.cfg.m + 1)
    bands = range(1, run.cfg.m + 1)
    return [curvature_field(f, bands, run.grid(), s) for f, s in zip(run.fields, gs)]


def cmd_curvature(run: _Run):
    out = {}
    for c, cf in enumerate(_curvatures(run), start=1):
        pts = cf.centers.reshape(-1, 2)
        rows = [(k[0], k[1], F) for k, F in zip(pts, cf.values.ravel())]
        tables.write_table(run.out / f"curvature_c{c}.tsv", ["kx", "ky", "F"], rows)
        out[f"crystal{c}"] = {"total": cf.total}
    return out


def cmd_chern(run: _Run):
    out = {}
    for c, cf in enumerate(_curvatures(run), start=1):
        n, res = chern(None, cf.bands, cf.kgrid, curvature=cf)
        out[f"crystal{c}"] = {"chern": n, "residual": res, "raw": cf.total}
    _write_json(run.out / "chern.json", out)
    return out


def cmd_valley_chern(run: _Run):
    cfg = run.cfg
    if cfg.valleys is None:
        raise ValidationError(["valley-chern needs [invariant] k1 and k2"])
    k1, k2 = (np.asarray(k, float) for k in cfg.valleys)
    out = {}
    for c, (f, cf) in enumerate(zip(run.fields, _curvatures(run)), start=1):
        i1, i2 = valley_integrals(cf, k1, k2, cfg.valley_radius)
        vc = 0 if abs(i1 - i2) < 1e-8 else int(np.sign(i1 - i2))
        F = [plaquette_curvature(f, range(1, cfg.m + 1), plaquette_corners(k, cf.kgrid)) for k in (k1, k2)]
        peak = np.unravel_index(np.argmax(np.abs(cf.values)), cf.values.shape)
        out[f"crystal{c}"] = {"valley_chern": vc, "C_k1": i1, "C_k2": i2, "F_k1": F[0], "F_k2": F[1],
                              "peak_kappa": cf.centers[peak].tolist(), "peak_F": float(cf.values[peak])}
    _write_json(run.out / "valley_chern.json", out)
    return out


def cmd_wilson(run: _Run):
    cfg = run.cfg
    bands = cfg.wilson_bands or range(1, cfg.m + 1)
    half = 0.5 * np.linalg.norm(run.lattice.b1)
    k1 = np.linspace(-half, half, cfg.wilson_kappa1_samples) if cfg.wilson_kappa1_samples > 1 else np.zeros(1)
    out = {}
    for c, f in enumerate(run.fields, start=1):
        ws = wilson_loop(f, bands, k1, cfg.wilson_samples)
        cols = ["kappa1"] + [f"phase_{j + 1}" for j in range(ws.phases.shape[1])]
        tables.write_table(run.out / f"wilson_c{c}.tsv", cols, [(a, *p) for a, p in zip(ws.kappa1, ws.phases)])
        out[f"crystal{c}"] = {"max_abs_phase": float(np.abs(ws.phases).max())}
    return out


def cmd_optimize(run: _Run):
    from .sdpopt import run_optimization

    cfg = run.cfg
    ocfg = run.cfg.optimization_config()
    ocfg.workers = run.workers
    trace = open(run.out / "trace.jsonl", "w")

    def callback(rec, fields):
        trace.write(rec.to_json() + "\n")
        trace.flush()
        tag = "initial" if rec.iteration == 0 else f"iter{rec.iteration:03d}"
        for c, f in enumerate(fields, start=1):
            gridfile.write_grid(run.out / f"{tag}_c{c}.grid", f)

    try:
        res = run_optimization(run.fields, ocfg, callback)
    finally:
        trace.close()
    if res.trace:
        for c, f in enumerate(res.fields, start=1):
            gridfile.write_grid(run.out / f"final_c{c}.grid", f)
    summary = {"converged": res.converged, "iterations": len(res.trace), "initial": res.initial.G,
               "final": res.evaluation.report.as_dict(), "valley_chern": res.evaluation.valley_chern,
               "max_iterations": cfg.max_iterations}
    _write_json(run.out / "gap.json", res.evaluation.report.as_dict())
    return summary


def cmd_edge(run: _Run, source=None):
    from . import edge

    cfg = run.cfg
    if source is not None:
        tag = "final" if (Path(source) / "final_c1.grid").exists() else "initial"
        fields = tuple(gridfile.read_grid(Path(source) / f"{tag}_c{c}.grid") for c in (1, 2))
    else:
        fields = run.fields
    q = cfg.m + 1
    gs = [grid_solutions(f, run.grid(), q, run.workers, cfg.seed) for f in fields]
    path = high_symmetry_path(run.lattice, cfg.path_samples)
    bs = [band_structure(f, path, q, run.workers, cfg.seed) for f in fields]
    rep = gap_report(list(gs[0].ravel()) + bs[0], list(gs[1].ravel()) + bs[1], cfg.m)
    if not rep.is_open:
        raise TopogapError(f"no shared gap above band {cfg.m} (J={rep.J:.4g})")
    window = (rep.lambda_l, rep.lambda_u)
    cell = edge.build_supercell(fields[0], fields[1], cfg.edge_periods, cfg.edge_shift)
    kpars = np.linspace(-np.pi, np.pi, cfg.edge_kpar_samples)
    disp = edge.dispersion(cell, kpars, window, bulk_fields=fields, bands=q)
    tables.write_table(run.out / "edge.tsv", ["kpar", "lambda", "omega", "localization", "is_edge"], disp.rows())
    tables.write_table(run.out / "edge_bulk.tsv", ["medium", "kpar", "band", "lo", "hi"], disp.bulk_rows())
    summary = {"window": list(window), "coverage": disp.edge_coverage(), "n_modes": len(disp.rows())}
    _write_json(run.out / "edge.json", summary)
    return summary


def cmd_validate(run: _Run, grids=()):
    problems = []
    for g in grids:
        f = gridfile.read_grid(g)
        problems += [f"{g}: {v}" for v in f.violations()]
    if run is not None:
        for c, f in enumerate(run.fields, start=1):
            problems += [f"crystal{c}: {v}" for v in f.violations()]
    if problems:
        raise ValidationError(problems)
    return {"valid": True}


def build_parser():
    p = argparse.ArgumentParser(prog="topogap", description="Shared band gap optimization of two photonic crystals.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (TOML)")
    common.add_argument("--out", type=Path, help="output directory (default: [run] output)")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads for k-point sweeps (default: ${THREADS_ENV} or 1)")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, parents=[common])
        if name == "edge":
            s.add_argument("--from", dest="source", type=Path,
                           help="optimize output directory (final_c*.grid, else initial_c*.grid)")
        if name == "validate":
            s.add_argument("grids", nargs="*", type=Path, help="grid files to check")
    return p


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SystemExit(f"topogap: {THREADS_ENV} must be an integer, got {env!r}")
    return 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.config is None and not (args.command == "validate" and args.grids):
        parser.error(f"{args.command} needs --config")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    workers = _threads(args.threads)
    try:
        run = None
        if args.config is not None:
            cfg = parse_config(args.config)
            out = args.out if args.out is not None else cfg.output
            out.mkdir(parents=True, exist_ok=True)
            run = _Run(cfg, out, workers)
        if args.command == "validate":
            result = cmd_validate(run, args.grids)
        elif args.command == "edge":
            result = cmd_edge(run, args.source)
        else:
            result = globals()["cmd_" + args.command.replace("-", "_")](run)
    except TopogapError as exc:
        rec = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        if isinstance(exc, ValidationError):
            rec["violations"] = exc.violations
        print(json.dumps(rec), file=sys.stderr)
        return 1
    print(json.dumps(result, default=_plain))
    return 0


if __name__ == "__main__":
    sys.exit(main())
