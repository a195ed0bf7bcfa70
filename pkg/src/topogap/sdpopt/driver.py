"""Outer loop of the gap optimization: linearize, solve the SDP, update, verify."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from ..bloch import DEFAULT_SEED, assemble, band_structure, eigensolve, gap_report, grid_solutions
from ..errors import GapClosed, SolverFailure
from ..lattice import high_symmetry_path, k_grid, symmetry_orbits
from ..medium import symmetrize
from ..topo import curvature_field, curvature_sensitivity, plaquette_corners, plaquette_curvature, valley_integrals
from .assemble import CrystalState, build_problem, dedupe_time_reversal
from .backends import solve
from .problem import projector, recover, tau

log = logging.getLogger(__name__)


@dataclass
class OptimizationConfig:
    m: int
    s: int = 3
    Nk: int = 24
    path_samples: int = 8
    interior: int = 6
    symmetry: str = "identity"
    invariant: str = "valley"              # "valley" or "none"
    valleys: Optional[tuple] = None        # ((k1x, k1y), (k2x, k2y))
    valley_radius: Optional[float] = None
    tau0: float = 0.5
    tau_ratio: float = 0.5
    rho: float = 0.1
    max_iterations: int = 30
    tol: float = 1e-3                      # RMS change, relative to eps_hi - eps_lo
    backend: str = "cvxopt"
    solver_options: dict = field(default_factory=dict)
    adaptive_k: bool = True
    max_adaptive: int = 24
    max_retries: int = 3
    theta_floor: float = 1e-3
    allow_closed_start: bool = False       # start from J <= 0; GapClosed only once the gap has opened
    curvature_form: str = "det"
    workers: Optional[int] = None
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.m < 1 or self.s < 1:
            raise ValueError("m and s must be positive")
        if self.Nk < 4 or self.interior < 4:
            raise ValueError("Nk and interior must be >= 4")
        if self.invariant not in ("valley", "none"):
            raise ValueError(f"unknown invariant mode {self.invariant!r}")
        if self.invariant == "valley" and self.valleys is None:
            raise ValueError("valley mode needs two valley points")
        if not (0 < self.tau0 <= 1 and 0 < self.tau_ratio < 1):
            raise ValueError("need 0 < tau0 <= 1 and 0 < tau_ratio < 1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")


@dataclass
class Evaluation:
    """Nonlinear verification of a pair of fields on the full k-grid."""

    report: object                      # GapReport
    valley_chern: Optional[list] = None
    F: Optional[list] = None            # [[F(k1), F(k2)] per crystal]
    grid: Optional[list] = None
    curvature: Optional[list] = None


@dataclass
class IterationRecord:
    iteration: int
    G: float
    J: float
    lambda_l: float
    lambda_u: float
    F: Optional[list]
    F_ok: Optional[list]
    valley_chern: Optional[list]
    delta_eps: list
    status: str
    objective: Optional[float]
    rho: Optional[float]
    tau: Optional[float]
    n_kpoints: list
    seconds: float

    def to_json(self):
        return json.dumps(asdict(self), default=_jsonable)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


@dataclass
class OptimizationResult:
    initial: IterationRecord
    trace: list
    fields: tuple
    initial_fields: tuple
    converged: bool
    evaluation: Evaluation
    snapshots: list = field(default_factory=list)

    @property
    def records(self):
        return [self.initial] + list(self.trace)


def rms_change(a, b):
    return float(np.sqrt(np.mean((a.values - b.values) ** 2)))


class _Optimizer:
    def __init__(self, cfg: OptimizationConfig, fields):
        self.cfg = cfg
        lat = fields[0].lattice
        if fields[1].lattice != lat or fields[0].n != fields[1].n:
            raise ValueError("both crystals must share lattice and resolution")
        self.lattice = lat
        self.kgrid = k_grid(lat, cfg.Nk)
        self.path = high_symmetry_path(lat, cfg.path_samples)
        self.orbits = symmetry_orbits(fields[0].n, cfg.symmetry, lat)
        base = np.concatenate([self.path.points, k_grid(lat, cfg.interior).points.reshape(-1, 2)])
        base = dedupe_time_reversal(lat, base)
        self.kset = [base.copy(), base.copy()]
        self.n_base = len(base)
        self.F0 = None

    # -- verification ------------------------------------------------------

    def evaluate(self, fields) -> Evaluation:
        cfg = self.cfg
        grids, paths, curv = [], [], []
        for f in fields:
            sols = grid_solutions(f, self.kgrid, cfg.m + 1, cfg.workers, cfg.seed)
            grids.append(sols)
            paths.append(band_structure(f, self.path, cfg.m + 1, cfg.workers, cfg.seed))
        report = gap_report(list(grids[0].ravel()) + paths[0], list(grids[1].ravel()) + paths[1], cfg.m)
        ev = Evaluation(report, grid=grids)
        if cfg.invariant == "valley":
            k1, k2 = (np.asarray(k, float) for k in cfg.valleys)
            vc, Fs = [], []
            for f, sols in zip(fields, grids):
                cf = curvature_field(f, range(1, cfg.m + 1), self.kgrid, sols, form=cfg.curvature_form)
                curv.append(cf)
                c1, c2 = valley_integrals(cf, k1, k2, cfg.valley_radius)
                vc.append(0 if abs(c1 - c2) < 1e-8 else int(np.sign(c1 - c2)))
                Fs.append([plaquette_curvature(f, range(1, cfg.m + 1), plaquette_corners(k, self.kgrid),
                                               form=cfg.curvature_form) for k in (k1, k2)])
            ev.valley_chern, ev.F, ev.curvature = vc, Fs, curv
        return ev

    def add_extremal_points(self, ev: Evaluation):
        """Add the grid points where band ``m`` peaks and band ``m+1`` dips."""
        m = self.cfg.m
        for c, sols in enumerate(ev.grid):
            lam = np.array([[s.eigenvalues[m - 1], s.eigenvalues[m]] for s in sols.ravel()])
            pts = np.array([s.kappa for s in sols.ravel()])
            new = [pts[np.argmax(lam[:, 0])], pts[np.argmin(lam[:, 1])]]
            merged = dedupe_time_reversal(self.lattice, np.concatenate([self.kset[c], new]))
            extra = merged[self.n_base:]
            if len(extra) > self.cfg.max_adaptive:
                extra = extra[-self.cfg.max_adaptive:]
            self.kset[c] = np.concatenate([merged[: self.n_base], extra])

    # -- one linearized step ----------------------------------------------

    def crystal_states(self, fields, ev: Evaluation):
        cfg = self.cfg
        states = []
        for c, f in enumerate(fields):
            blocks = []
            for k in self.kset[c]:
                op = assemble(f, k)
                sol = eigensolve(op, cfg.m + cfg.s, seed=cfg.seed)
                blocks.append((projector(sol, c + 1, cfg.m, cfg.s), op.K))
            st = CrystalState(f, self.orbits, blocks)
            if cfg.invariant == "valley":
                for j, k in enumerate(cfg.valleys):
                    sf = curvature_sensitivity(f, range(1, cfg.m + 1), plaquette_corners(k, self.kgrid),
                                               form=cfg.curvature_form)
                    st.sensitivities.append(sf)
                    st.F_current.append(sf.value)
                    st.F_initial.append(self.F0[c][j])
            states.append(st)
        return states

    def step(self, fields, states, rho, tau_p):
        cfg = self.cfg
        prob, x0 = build_problem(states, rho, tau_p, cfg.theta_floor, cfg.invariant)
        it = solve(prob, cfg.backend, **cfg.solver_options)
        if not it.ok:
            return it, None
        new = []
        for c, f in enumerate(fields):
            g = recover(it.values[f"eps{c + 1}"], it.theta, self.orbits, f)
            new.append(symmetrize(g, self.orbits))
        return it, tuple(new)


def _record(iteration, ev: Evaluation, F0, tau0, delta, status, objective, rho, tau_p, nk, t0):
    F_ok = None
    if ev.F is not None and F0 is not None:
        F_ok = [[bool(abs(F) >= tau0 * abs(F0c[j]) and np.sign(F) == np.sign(F0c[j])) for j, F in enumerate(Fc)]
                for Fc, F0c in zip(ev.F, F0)]
    r = ev.report
    return IterationRecord(iteration, r.G, r.J, r.lambda_l, r.lambda_u, ev.F, F_ok, ev.valley_chern,
                           list(delta), status, objective, rho, tau_p, list(nk), time.time() - t0)


def run_optimization(fields, cfg: OptimizationConfig, callback: Optional[Callable] = None) -> OptimizationResult:
    """Maximize the shared gap above band ``m`` of two crystals.

    Each outer iteration solves the linearized SDP around the current pair,
    recovers and symmetrizes the fields, then re-verifies gap and invariants on the
    full grid.  A step is retried with half the trust radius when the backend fails
    or the valley Chern numbers change; after ``max_retries`` failures the run
    aborts with :class:`SolverFailure`.  ``callback(record, fields)`` is called after
    every accepted iterate.
    """
    t0 = time.time()
    fields = tuple(symmetrize(f, symmetry_orbits(f.n, cfg.symmetry, f.lattice)) for f in fields)
    for f in fields:
        if f.violations(1e-9):
            raise ValueError(f"initial field is not admissible: {f.violations(1e-9)}")
    opt = _Optimizer(cfg, fields)
    ev = opt.evaluate(fields)
    if cfg.invariant == "valley":
        opt.F0 = ev.F
    initial = _record(0, ev, opt.F0, cfg.tau0, [0.0, 0.0], "initial", None, None, None,
                      [len(k) for k in opt.kset], t0)
    trace = []
    snapshots = [fields]
    if callback:
        callback(initial, fields)
    opened = ev.report.J > 0
    if not opened and not cfg.allow_closed_start:
        raise GapClosed(f"initial pair has no shared gap (J={ev.report.J:.4g})", [initial])
    initial_fields = fields
    span = fields[0].eps_hi - fields[0].eps_lo
    converged = False
    for p in range(cfg.max_iterations):
        t_it = time.time()
        if cfg.adaptive_k:
            opt.add_extremal_points(ev)
        states = opt.crystal_states(fields, ev)
        tau_p = tau(p, cfg.tau0, cfg.tau_ratio) if cfg.invariant == "valley" else None
        rho = cfg.rho
        accepted = None
        for attempt in range(cfg.max_retries + 1):
            it, new = opt.step(fields, states, rho, tau_p)
            if new is None:
                log.warning("iteration %d: backend status %s, halving trust radius", p + 1, it.status)
            else:
                ev_new = opt.evaluate(new)
                if cfg.invariant == "valley" and ev_new.valley_chern != ev.valley_chern:
                    log.warning("iteration %d: valley Chern changed %s -> %s, halving trust radius",
                                p + 1, ev.valley_chern, ev_new.valley_chern)
                else:
                    accepted = (it, new, ev_new)
                    break
            rho *= 0.5
        if accepted is None:
            raise SolverFailure(f"iteration {p + 1}: no acceptable step after {cfg.max_retries} retries "
                                f"(last status {it.status})", trace)
        it, new, ev_new = accepted
        delta = [rms_change(a, b) for a, b in zip(new, fields)]
        rec = _record(p + 1, ev_new, opt.F0, cfg.tau0, delta, it.status, it.objective, rho, tau_p,
                      [len(k) for k in opt.kset], t_it)
        trace.append(rec)
        log.info("iteration %d: G=%.5f J=%.5f delta=%s status=%s (%.1fs)", p + 1, rec.G, rec.J,
                 ["%.3g" % d for d in delta], it.status, rec.seconds)
        if rec.G < (trace[-2].G if len(trace) > 1 else initial.G):
            log.info("iteration %d: gap ratio decreased", p + 1)
        fields, ev = new, ev_new
        snapshots.append(fields)
        if callback:
            callback(rec, fields)
        if ev.report.J > 0:
            opened = True
        elif opened:
            raise GapClosed(f"shared gap closed at iteration {p + 1} (J={ev.report.J:.4g})", trace)
        if max(delta) < cfg.tol * span or math.isinf(cfg.tol):
            converged = True
            break
    return OptimizationResult(initial, trace, fields, initial_fields, converged, ev, snapshots)
