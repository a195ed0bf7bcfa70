"""Run configuration files (TOML).

A configuration has a ``[run]`` table, optional ``[invariant]``, ``[optimize]``,
``[edge]`` and ``[wilson]`` tables and one table per crystal::

    [run]
    lattice = "square"
    n = 48
    m = 3

    [invariant]
    mode = "valley"
    k1 = [-1.2, 1.2]
    k2 = [1.2, -1.2]

    [crystal1]
    background = 1.0
    shapes = [{type = "right_triangle", corner = [0.35, 0.35], short_edge = 0.45,
               orientation = 0, fill = 11.7}]

    [crystal2]
    grid = "start2.grid"

Each crystal is given either by ``background`` plus ``shapes`` or by a ``grid``
file (relative paths are resolved against the config file).  Shape types are
``disk`` (center, diameter), ``polygon`` (vertices), ``right_triangle`` (corner,
short_edge, orientation in degrees) and ``ring`` (``count`` disks of ``diameter``
at distance ``radius`` from ``center``, the first at angle ``angle`` degrees).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ParseError, ValidationError
from .lattice import Lattice, LatticeKind, symmetry_orbits
from .medium import Disk, Polygon, RightTriangle, rasterize, symmetrize

SYMMETRIES = ("identity", "C2", "C3", "C4", "C6")


@dataclass
class CrystalSpec:
    background: Optional[float] = None
    shapes: list = field(default_factory=list)
    grid: Optional[Path] = None


@dataclass
class RunConfig:
    lattice: str = "square"
    n: int = 48
    Nk: int = 24
    path_samples: int = 8
    m: int = 1
    eps_lo: float = 1.0
    eps_hi: float = 11.7
    symmetry: str = "identity"
    seed: int = 20240917
    output: Path = Path("out")
    # invariant
    invariant: str = "none"
    k1: Optional[tuple] = None
    k2: Optional[tuple] = None
    valley_radius: Optional[float] = None
    # optimization
    s: int = 3
    interior: int = 6
    tau0: float = 0.5
    tau_ratio: float = 0.5
    rho: float = 0.1
    max_iterations: int = 30
    tol: float = 1e-3
    backend: str = "cvxopt"
    adaptive_k: bool = True
    allow_closed_start: bool = False
    # edge
    edge_periods: int = 12
    edge_kpar_samples: int = 41
    edge_shift: float = 0.0
    edge_width: int = 4
    # wilson
    wilson_bands: Optional[tuple] = None
    wilson_samples: int = 24
    wilson_kappa1_samples: int = 25
    crystals: tuple = ()

    def lattice_obj(self):
        return Lattice.from_kind(self.lattice)

    @property
    def valleys(self):
        return None if self.k1 is None else (tuple(self.k1), tuple(self.k2))

    def optimization_config(self):
        from .sdpopt import OptimizationConfig

        return OptimizationConfig(
            m=self.m, s=self.s, Nk=self.Nk, path_samples=self.path_samples, interior=self.interior,
            symmetry=self.symmetry, invariant=self.invariant, valleys=self.valleys,
            valley_radius=self.valley_radius, tau0=self.tau0, tau_ratio=self.tau_ratio, rho=self.rho,
            max_iterations=self.max_iterations, tol=self.tol, backend=self.backend,
            adaptive_k=self.adaptive_k, allow_closed_start=self.allow_closed_start, seed=self.seed)

    def fields(self):
        """Initial permittivity fields of both crystals (symmetrized over the group)."""
        from .gridfile import read_grid

        lat = self.lattice_obj()
        out = []
        for i, spec in enumerate(self.crystals, start=1):
            if spec.grid is not None:
                f = read_grid(spec.grid)
                if f.n != self.n or f.lattice != lat:
                    raise ValidationError([f"crystal{i}: grid file does not match lattice/n of the run"])
            else:
                f = rasterize(lat, self.n, spec.background, _flatten_shapes(_shape(s) for s in spec.shapes),
                              self.eps_lo, self.eps_hi, self.symmetry)
            f = dataclasses.replace(f, symmetry=self.symmetry)
            if self.symmetry != "identity":
                f = symmetrize(f, symmetry_orbits(self.n, self.symmetry, lat))
            out.append(f)
        return tuple(out)


_DEFAULTS = RunConfig()

_RUN_KEYS = {"lattice", "n", "Nk", "path_samples", "m", "eps_lo", "eps_hi", "symmetry", "seed", "output"}
_INV_KEYS = {"mode": "invariant", "k1": "k1", "k2": "k2", "radius": "valley_radius"}
_OPT_KEYS = {"s", "interior", "tau0", "tau_ratio", "rho", "max_iterations", "tol", "backend", "adaptive_k",
             "allow_closed_start"}
_EDGE_KEYS = {"periods": "edge_periods", "kpar_samples": "edge_kpar_samples", "shift": "edge_shift",
              "width": "edge_width"}
_WILSON_KEYS = {"bands": "wilson_bands", "samples": "wilson_samples", "kappa1_samples": "wilson_kappa1_samples"}
_SHAPE_KEYS = {
    "disk": {"center", "diameter", "fill"},
    "polygon": {"vertices", "fill"},
    "right_triangle": {"corner", "short_edge", "orientation", "fill"},
    "ring": {"center", "radius", "count", "diameter", "fill", "angle"},
}


def _shape(d):
    t = d["type"]
    if t == "disk":
        return [Disk(tuple(d["center"]), float(d["diameter"]), float(d["fill"]))]
    if t == "polygon":
        return [Polygon(tuple(map(tuple, d["vertices"])), float(d["fill"]))]
    if t == "right_triangle":
        return [RightTriangle(tuple(d["corner"]), float(d["short_edge"]), float(d.get("orientation", 0.0)),
                              float(d["fill"]))]
    if t == "ring":
        c = np.asarray(d["center"], float)
        a0 = np.deg2rad(float(d.get("angle", 0.0)))
        k = int(d["count"])
        return [Disk(tuple(c + d["radius"] * np.array([np.cos(a0 + 2 * np.pi * j / k), np.sin(a0 + 2 * np.pi * j / k)])),
                     float(d["diameter"]), float(d["fill"])) for j in range(k)]
    raise ValueError(t)


def _flatten_shapes(groups):
    return [s for g in groups for s in g]


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror})") from exc
    return parse_config_text(text, path.parent, str(path))


def parse_config_text(text, base=Path("."), source="<config>") -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{source}: {exc}") from exc
    problems = []
    values = {}

    def take(table, mapping, name):
        for key, val in doc.get(table, {}).items():
            target = mapping.get(key) if isinstance(mapping, dict) else (key if key in mapping else None)
            if target is None:
                problems.append(f"[{name}] unknown field {key!r}")
            else:
                values[target] = val

    known = {"run", "invariant", "optimize", "edge", "wilson", "crystal1", "crystal2"}
    for t in doc:
        if t not in known:
            problems.append(f"unknown section [{t}]")
    take("run", _RUN_KEYS, "run")
    take("invariant", _INV_KEYS, "invariant")
    take("optimize", _OPT_KEYS, "optimize")
    take("edge", _EDGE_KEYS, "edge")
    take("wilson", _WILSON_KEYS, "wilson")
    crystals = []
    for i in (1, 2):
        sec = doc.get(f"crystal{i}")
        if sec is None:
            problems.append(f"missing section [crystal{i}]")
            continue
        spec = CrystalSpec()
        extra = set(sec) - {"background", "shapes", "grid"}
        if extra:
            problems.append(f"[crystal{i}] unknown field(s) {sorted(extra)}")
        has_geom = "background" in sec or "shapes" in sec
        if has_geom == ("grid" in sec):
            problems.append(f"[crystal{i}] needs exactly one of 'grid' or 'background' + 'shapes'")
        if "grid" in sec:
            g = Path(sec["grid"])
            spec.grid = g if g.is_absolute() else base / g
        if has_geom:
            spec.background = sec.get("background")
            if spec.background is None:
                problems.append(f"[crystal{i}] 'background' is required with 'shapes'")
            for j, s in enumerate(sec.get("shapes", [])):
                t = s.get("type") if isinstance(s, dict) else None
                if t not in _SHAPE_KEYS:
                    problems.append(f"[crystal{i}] shape {j}: unknown type {t!r}")
                    continue
                need = _SHAPE_KEYS[t] - {"orientation", "angle"}
                missing = need - set(s)
                extra = set(s) - _SHAPE_KEYS[t] - {"type"}
                if missing:
                    problems.append(f"[crystal{i}] shape {j} ({t}): missing {sorted(missing)}")
                if extra:
                    problems.append(f"[crystal{i}] shape {j} ({t}): unknown {sorted(extra)}")
                if not missing and not extra:
                    spec.shapes.append(s)
        crystals.append(spec)
    try:
        cfg = dataclasses.replace(_DEFAULTS, **values)
    except TypeError as exc:
        raise ParseError(f"{source}: {exc}") from exc
    cfg.output = Path(cfg.output)
    if not cfg.output.is_absolute():
        cfg.output = base / cfg.output
    cfg.crystals = tuple(crystals)
    problems += validate(cfg)
    if problems:
        raise ValidationError(problems)
    return cfg


def _num(v, kind=float):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and (kind is float or isinstance(v, int))


def validate(cfg: RunConfig):
    p = []
    if cfg.lattice not in (LatticeKind.SQUARE.value, LatticeKind.HEXAGONAL.value):
        p.append(f"lattice must be 'square' or 'hexagonal', got {cfg.lattice!r}")
    for name, lo in (("n", 8), ("Nk", 4), ("path_samples", 2), ("m", 1), ("s", 1), ("interior", 4),
                     ("max_iterations", 0), ("edge_periods", 4), ("edge_kpar_samples", 1), ("edge_width", 1),
                     ("wilson_samples", 8), ("wilson_kappa1_samples", 1)):
        v = getattr(cfg, name)
        if not _num(v, int) or v < lo:
            p.append(f"{name} must be an integer >= {lo}, got {v!r}")
    for name in ("eps_lo", "eps_hi", "tau0", "tau_ratio", "rho", "tol", "edge_shift"):
        if not _num(getattr(cfg, name)):
            p.append(f"{name} must be a number, got {getattr(cfg, name)!r}")
    if not p:
        if not cfg.eps_lo > 0:
            p.append(f"eps_lo must be positive, got {cfg.eps_lo}")
        if cfg.eps_lo > cfg.eps_hi:
            p.append(f"eps_lo={cfg.eps_lo} exceeds eps_hi={cfg.eps_hi}")
        if not 0 < cfg.tau0 <= 1:
            p.append(f"tau0 must lie in (0, 1], got {cfg.tau0}")
        if not 0 < cfg.tau_ratio < 1:
            p.append(f"tau_ratio must lie in (0, 1), got {cfg.tau_ratio}")
        if not cfg.rho > 0:
            p.append(f"rho must be positive, got {cfg.rho}")
        if not cfg.tol > 0:
            p.append(f"tol must be positive, got {cfg.tol}")
        if cfg.edge_width >= cfg.edge_periods:
            p.append("edge width must be smaller than the number of periods")
    if cfg.symmetry not in SYMMETRIES:
        p.append(f"symmetry must be one of {SYMMETRIES}, got {cfg.symmetry!r}")
    if cfg.invariant not in ("valley", "none"):
        p.append(f"invariant mode must be 'valley' or 'none', got {cfg.invariant!r}")
    if cfg.invariant == "valley" and (cfg.k1 is None or cfg.k2 is None):
        p.append("valley mode needs k1 and k2")
    for name in ("k1", "k2"):
        v = getattr(cfg, name)
        if v is not None and (len(v) != 2 or not all(_num(x) for x in v)):
            p.append(f"{name} must be a pair of numbers")
    if cfg.backend not in ("cvxopt", "cvxopt-dense", "clarabel"):
        p.append(f"unknown backend {cfg.backend!r}")
    for i, spec in enumerate(cfg.crystals, start=1):
        for s in spec.shapes:
            if "fill" in s and _num(s["fill"]) and not cfg.eps_lo <= s["fill"] <= cfg.eps_hi:
                p.append(f"crystal{i}: fill {s['fill']} outside [{cfg.eps_lo}, {cfg.eps_hi}]")
        if spec.background is not None and _num(spec.background) and not cfg.eps_lo <= spec.background <= cfg.eps_hi:
            p.append(f"crystal{i}: background {spec.background} outside [{cfg.eps_lo}, {cfg.eps_hi}]")
    return p
