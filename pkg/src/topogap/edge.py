"""Edge modes of two crystals glued along the lattice vector ``e2``.

The strip is ``2L`` periods long in the ``e1`` direction, crystal 1 on the side
``l1 > 0`` and crystal 2 on ``l1 < 0`` (``l`` the fractional coordinates).  Along
``e2`` the field is quasi-periodic, ``u(x + e2) = exp(i kpar) u(x)``; at the two
far ends ``u = 0``.  The same nine-point stencil as the bulk operator is used, so
a strip made of one crystal reproduces the bulk spectrum folded onto ``kpar``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bloch import DEFAULT_SEED, _offsets, solve_at, stencil_coefficients
from .errors import ConvergenceFailure, MismatchedFields

log = logging.getLogger(__name__)

DEFAULT_PERIODS = 12
EDGE_WIDTH = 4
EDGE_THRESHOLD = 0.9
WINDOW_MARGIN = 1e-3


@dataclass(frozen=True, eq=False)
class Supercell:
    lattice: object
    n: int
    L: int
    values: np.ndarray          # (2 L n, n); row i has l1 = (i + 1/2)/n - L
    shift: float
    eps_lo: float
    eps_hi: float

    @property
    def shape(self):
        return self.values.shape

    @property
    def cell_weight(self):
        return self.lattice.cell_area / self.n**2

    @property
    def l1(self):
        """Fractional coordinate along ``e1`` of each row of cells."""
        return (np.arange(2 * self.L * self.n) + 0.5) / self.n - self.L


def translate(values, lattice, shift):
    """Periodic cell values of the medium translated by ``shift`` along ``x1``.

    Sub-cell translations use periodic bilinear interpolation of the cell values, so
    the result stays within the original bounds; whole-cell shifts are exact.
    """
    n = values.shape[0]
    if shift == 0:
        return np.array(values, float)
    dl = np.linalg.solve(lattice.E, np.array([shift, 0.0])) * n   # in cells
    out = np.asarray(values, float)
    for axis in (0, 1):
        d = dl[axis]
        if abs(d) < 1e-12:
            continue
        k = int(np.floor(d))
        t = d - k
        a = np.roll(out, k, axis=axis)
        b = np.roll(out, k + 1, axis=axis)
        out = (1 - t) * a + t * b
    return out


def build_supercell(eps1, eps2, L: int, shift: float = 0.0) -> Supercell:
    if eps1.lattice != eps2.lattice or eps1.n != eps2.n:
        raise MismatchedFields("both fields must share lattice and resolution")
    if L < 4:
        raise ValueError("L must be >= 4")
    lat, n = eps1.lattice, eps1.n
    v1 = translate(eps1.values, lat, shift)
    v2 = translate(eps2.values, lat, shift)
    # rows with l1 < 0 belong to crystal 2, l1 > 0 to crystal 1
    values = np.concatenate([np.tile(v2, (L, 1)), np.tile(v1, (L, 1))], axis=0)
    return Supercell(lat, n, int(L), values, float(shift),
                     min(eps1.eps_lo, eps2.eps_lo), max(eps1.eps_hi, eps2.eps_hi))


def strip_operator(cell: Supercell, kpar):
    """``(K, mdiag)`` of the strip for the quasi-momentum ``kpar`` (radians per period)."""
    N1, n = cell.values.shape
    coef = stencil_coefficients(cell.lattice, n)
    idx = np.arange(N1 * n).reshape(N1, n)
    rows, cols, vals = [], [], []
    for (p, q) in _offsets():
        i = np.arange(N1)[:, None] + p
        j = np.arange(n)[None, :] + q
        inside = (i >= 0) & (i < N1)
        I = np.broadcast_to(i, (N1, n))
        J = np.broadcast_to(j, (N1, n))
        wraps = np.floor_divide(J, n)
        phase = np.exp(1j * kpar * wraps)
        mask = np.broadcast_to(inside, (N1, n))
        rows.append(idx[mask])
        cols.append((I[mask]) * n + (J[mask] % n))
        vals.append(coef[(p, q)] * phase[mask])
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N1 * n, N1 * n))
    return K, cell.values.ravel() * cell.cell_weight


@dataclass(frozen=True, eq=False)
class EdgeModes:
    kpar: float
    eigenvalues: np.ndarray
    vectors: np.ndarray
    localization: np.ndarray
    end_fraction: np.ndarray

    @property
    def is_edge(self):
        return self.localization >= EDGE_THRESHOLD


def _nearest_eigs(K, mdiag, sigma, k, seed):
    N = K.shape[0]
    dinv = 1.0 / np.sqrt(mdiag)
    A = (sp.diags(dinv) @ K @ sp.diags(dinv)).tocsc()
    if N <= 400:
        lam, V = sla.eigh(A.toarray())
        order = np.argsort(np.abs(lam - sigma))[:k]
        return lam[order], dinv[:, None] * V[:, order]
    lu = spla.splu(A - sigma * sp.identity(N, format="csc"), permc_spec="MMD_AT_PLUS_A")
    Op = spla.LinearOperator((N, N), matvec=lu.solve, dtype=complex)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    try:
        mu, V = spla.eigsh(Op, k=k, which="LM", v0=v0, tol=1e-12, maxiter=50 * N)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceFailure(f"strip eigensolver did not converge near {sigma:.4g}") from exc
    V, _ = np.linalg.qr(V)
    H = V.conj().T @ (A @ V)
    lam, Y = np.linalg.eigh(0.5 * (H + H.conj().T))
    V = V @ Y
    return lam, dinv[:, None] * V


def in_window(lam, window, margin=WINDOW_MARGIN):
    """Strictly inside ``(lo + d, hi - d)`` with ``d = margin * (hi - lo)``."""
    lo, hi = window
    d = margin * (hi - lo)
    lam = np.asarray(lam)
    return (lam > lo + d) & (lam < hi - d)


def edge_eigs(cell: Supercell, kpar, window, count=8, w=EDGE_WIDTH, margin=WINDOW_MARGIN,
              seed=DEFAULT_SEED) -> EdgeModes:
    """Strip eigenpairs with eigenvalue inside the window, nearest-to-midgap first.

    ``count`` eigenpairs around the window center are computed; if all of them
    fall inside the window the count is doubled until one falls outside, so no
    in-window eigenvalue is missed.
    """
    lo, hi = window
    if not hi > lo:
        raise ValueError("empty window")
    K, mdiag = strip_operator(cell, kpar)
    sigma = 0.5 * (lo + hi)
    N = K.shape[0]
    k = min(count, N - 2)
    while True:
        lam, V = _nearest_eigs(K, mdiag, sigma, k, seed)
        inside = in_window(lam, window, margin)
        if not inside.all() or k >= N - 2:
            break
        k = min(2 * k, N - 2)
    lam, V = lam[inside], V[:, inside]
    order = np.argsort(lam)
    lam, V = lam[order], V[:, order]
    # M-normalize
    V = V / np.sqrt(np.sum(mdiag[:, None] * np.abs(V) ** 2, axis=0))
    loc = np.array([localization(V[:, a], cell, w) for a in range(V.shape[1])])
    ends = np.array([end_fraction(V[:, a], cell, w) for a in range(V.shape[1])])
    return EdgeModes(float(kpar), lam, V, loc, ends)


def _row_mass(mode, cell):
    m = (cell.values * np.abs(np.asarray(mode).reshape(cell.values.shape)) ** 2).sum(axis=1)
    return m / m.sum()


def localization(mode, cell: Supercell, w=EDGE_WIDTH):
    """Share of the eps-weighted squared mass within ``w`` periods of the interface."""
    if not 0 < w <= cell.L:
        raise ValueError("need 0 < w <= L")
    mass = _row_mass(mode, cell)
    return float(np.clip(mass[np.abs(cell.l1) < w].sum(), 0.0, 1.0))


def end_fraction(mode, cell: Supercell, w=EDGE_WIDTH):
    """Share of the mass within ``w`` periods of the two truncation ends."""
    mass = _row_mass(mode, cell)
    return float(np.clip(mass[np.abs(cell.l1) > cell.L - w].sum(), 0.0, 1.0))


def bulk_projection(field, kpar, bands, samples=48, seed=DEFAULT_SEED):
    """Per-band ``(lo, hi)`` of the bulk spectrum over wave vectors with
    ``kappa . e2 = kpar``, sweeping the other component over one period."""
    lat = field.lattice
    s2 = kpar / (2 * np.pi)
    s1 = np.arange(samples) / samples - 0.5
    lam = np.array([solve_at(field, lat.to_cartesian_k(np.array([a, s2])), bands, seed).eigenvalues
                    for a in s1])
    return np.stack([lam.min(axis=0), lam.max(axis=0)], axis=1)


@dataclass
class EdgeDispersion:
    kpar: np.ndarray
    window: tuple
    modes: list                                  # EdgeModes per kpar
    bulk: dict = field(default_factory=dict)     # medium index -> (n_kpar, bands, 2)

    def rows(self):
        """``(kpar, lambda, omega, localization, is_edge)`` per in-window mode."""
        out = []
        for md in self.modes:
            for lam, loc in zip(md.eigenvalues, md.localization):
                out.append((md.kpar, lam, np.sqrt(max(lam, 0.0)), loc, bool(loc >= EDGE_THRESHOLD)))
        return out

    def bulk_rows(self):
        """``(medium, kpar, band, lo, hi)``."""
        out = []
        for med, arr in sorted(self.bulk.items()):
            for kp, iv in zip(self.kpar, arr):
                for b, (lo, hi) in enumerate(iv, start=1):
                    out.append((med, kp, b, lo, hi))
        return out

    def edge_coverage(self):
        """Fraction of ``kpar`` samples with at least one interface-localized mode."""
        return float(np.mean([md.is_edge.any() for md in self.modes]))

    def branches(self, k=2):
        """The ``k`` lowest in-window interface-mode eigenvalues per sample (nan if absent)."""
        out = np.full((len(self.modes), k), np.nan)
        for i, md in enumerate(self.modes):
            lam = md.eigenvalues[md.is_edge][:k]
            out[i, : len(lam)] = lam
        return out


def dispersion(cell: Supercell, kpars: Sequence[float], window, bulk_fields=(), bands=None,
               count=8, samples=48) -> EdgeDispersion:
    kpars = np.atleast_1d(np.asarray(kpars, float))
    if kpars.size == 0:
        raise ValueError("empty kpar grid")
    if np.any(np.abs(kpars) > np.pi + 1e-12):
        raise ValueError("kpar must lie in [-pi, pi]")
    modes = [edge_eigs(cell, kp, window, count) for kp in kpars]
    out = EdgeDispersion(kpars, tuple(window), modes)
    for i, f in enumerate(bulk_fields, start=1):
        out.bulk[i] = np.array([bulk_projection(f, kp, bands, samples) for kp in kpars])
    return out
