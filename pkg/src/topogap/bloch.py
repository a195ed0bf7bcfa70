"""Finite-difference Bloch operator, eigensolver, band sweeps and gap statistics.

The fundamental cell is mapped to the unit square by ``x = E l``.  In fractional
coordinates the shifted operator ``-(grad + i kappa) . (grad + i kappa)`` acting on
a periodic ``u`` is discretized by a nine-point stencil for
``-(G11 d11 + 2 G12 d12 + G22 d22)`` with ``G = E^{-1} E^{-T}`` applied to the
Bloch wave ``exp(i kappa . x) u``; neighbour values therefore pick up the phase
``exp(i kappa . E (p, q) h)``.  Both ``K`` and ``M`` carry the cell weight
``h^2 |det E|`` so that ``u^H M v`` approximates the integral of
``eps u conj(v)`` over the cell.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceFailure
from .lattice import KGrid, KPath

log = logging.getLogger(__name__)

# above this many unknowns the sparse shift-invert solver is used
DENSE_MAX_UNKNOWNS = 256
# relative eigenvalue spacing below which two eigenvalues form a cluster
CLUSTER_RTOL = 1e-8
DEFAULT_SEED = 20240917


def _offsets():
    return [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)]


def stencil_coefficients(lattice, n):
    """Stencil weights of ``K`` (already multiplied by the cell weight)."""
    G = lattice.metric_inverse
    area = lattice.cell_area
    # c_pq / h^2 times h^2 |det E|: the h's cancel
    c = {
        (0, 0): 2.0 * (G[0, 0] + G[1, 1]),
        (1, 0): -G[0, 0], (-1, 0): -G[0, 0],
        (0, 1): -G[1, 1], (0, -1): -G[1, 1],
        (1, 1): -0.5 * G[0, 1], (-1, -1): -0.5 * G[0, 1],
        (1, -1): 0.5 * G[0, 1], (-1, 1): 0.5 * G[0, 1],
    }
    return {k: v * area for k, v in c.items()}


@lru_cache(maxsize=16)
def _pattern(n):
    """CSR skeleton shared by every kappa: for each of the 9 offsets, the position
    of that offset's entries inside ``data`` plus row/col index arrays."""
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, offs = [], [], []
    for k, (p, q) in enumerate(_offsets()):
        nb = np.roll(np.roll(idx, -p, axis=0), -q, axis=1)  # nb[i,j] = idx[i+p, j+q]
        rows.append(idx.ravel())
        cols.append(nb.ravel())
        offs.append(np.full(n * n, k))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    offs = np.concatenate(offs)
    order = np.lexsort((cols, rows))
    rows, cols, offs = rows[order], cols[order], offs[order]
    indptr = np.searchsorted(rows, np.arange(n * n + 1))
    return cols.astype(np.int32), indptr.astype(np.int32), offs


@dataclass(frozen=True, eq=False)
class BlochOperator:
    kappa: np.ndarray
    K: sp.csr_matrix
    mdiag: np.ndarray          # diagonal of M (eps * cell weight)
    weight: float              # cell weight h^2 |det E|
    n: int

    @property
    def M(self):
        return sp.diags(self.mdiag)

    @property
    def size(self):
        return self.n * self.n


def stiffness(lattice, n, kappa):
    """Hermitian stiffness matrix ``K(kappa)`` (weighted), CSR."""
    kappa = np.asarray(kappa, float)
    cols, indptr, offs = _pattern(n)
    coef = stencil_coefficients(lattice, n)
    h = 1.0 / n
    vals = np.empty(len(_offsets()), dtype=complex)
    for k, (p, q) in enumerate(_offsets()):
        d = lattice.E @ np.array([p, q], float) * h
        vals[k] = coef[(p, q)] * np.exp(1j * kappa @ d)
    return sp.csr_matrix((vals[offs], cols, indptr), shape=(n * n, n * n))


def assemble(field, kappa) -> BlochOperator:
    K = stiffness(field.lattice, field.n, kappa)
    w = field.cell_weight
    return BlochOperator(np.asarray(kappa, float).copy(), K, field.values.ravel() * w, w, field.n)


@dataclass(frozen=True, eq=False)
class BandSolution:
    kappa: np.ndarray
    eigenvalues: np.ndarray     # ascending, shape (q,)
    eigenvectors: np.ndarray    # (n^2, q), phi^H M phi = I

    @property
    def omega(self):
        return np.sqrt(np.clip(self.eigenvalues, 0.0, None))

    @property
    def q(self):
        return len(self.eigenvalues)


def _rayleigh_ritz(A, V):
    V, _ = np.linalg.qr(V)
    H = V.conj().T @ (A @ V)
    H = 0.5 * (H + H.conj().T)
    lam, Y = np.linalg.eigh(H)
    return lam, V @ Y


def _fix_phase(V):
    # deterministic gauge: largest-modulus component of each column made real positive
    idx = np.argmax(np.abs(V), axis=0)
    ph = V[idx, np.arange(V.shape[1])]
    return V * (np.abs(ph) / ph)


def eigensolve(op: BlochOperator, q: int, seed=DEFAULT_SEED, tol=1e-10) -> BandSolution:
    """The ``q`` smallest eigenpairs of ``K phi = lambda M phi``.

    Solved as the standard problem for ``D^{-1/2} K D^{-1/2}`` with ``D = M``.  Large
    problems use ARPACK in shift-invert mode around ``sigma = -1`` (``K`` is positive
    semidefinite, so the wanted eigenvalues are those nearest the shift), followed by
    a Rayleigh-Ritz pass that makes the returned basis exactly M-orthonormal.
    """
    N = op.size
    if q < 1 or q >= N:
        raise ValueError(f"q={q} must satisfy 1 <= q < {N}")
    dinv = 1.0 / np.sqrt(op.mdiag)
    A = sp.diags(dinv) @ op.K @ sp.diags(dinv)
    A = A.tocsc()
    lam = V = None
    if N <= DENSE_MAX_UNKNOWNS:
        lam, V = sla.eigh(A.toarray(), subset_by_index=(0, q - 1))
    else:
        # a few extra vectors so a cluster straddling index q is resolved consistently
        k = min(q + 2, N - 2)
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(N) + 1j * rng.standard_normal(N)
        scale = abs(A.diagonal()).max()
        sigma = -1e-3 * scale
        try:
            lu = spla.splu(A - sigma * sp.identity(N, format="csc"), permc_spec="MMD_AT_PLUS_A")
            Op = spla.LinearOperator((N, N), matvec=lu.solve, dtype=complex)
            mu, V = spla.eigsh(Op, k=k, which="LM", v0=v0, tol=tol * 1e-2, maxiter=20 * N)
            lam, V = _rayleigh_ritz(A, V)
        except (spla.ArpackNoConvergence, spla.ArpackError, RuntimeError) as exc:
            log.warning("ARPACK failed at kappa=%s (%s); using dense fallback", op.kappa, exc)
            lam, V = sla.eigh(A.toarray(), subset_by_index=(0, q - 1))
        lam, V = lam[:q], V[:, :q]
    V = _fix_phase(V)
    phi = dinv[:, None] * V
    res = op.K @ phi - (op.mdiag[:, None] * phi) * lam
    scale = np.linalg.norm(op.K @ phi, axis=0) + np.abs(lam) * np.linalg.norm(op.mdiag[:, None] * phi, axis=0)
    rel = np.max(np.linalg.norm(res, axis=0) / np.maximum(scale, 1e-300 + abs(op.K).max()))
    if not np.isfinite(rel) or rel > 1e-6:
        raise ConvergenceFailure(f"eigensolver residual {rel:.2e}", residual=rel, kappa=op.kappa)
    return BandSolution(op.kappa, lam, phi)


def solve_at(field, kappa, q, seed=DEFAULT_SEED):
    try:
        return eigensolve(assemble(field, kappa), q, seed=seed)
    except ConvergenceFailure as exc:
        if exc.kappa is None:
            exc.kappa = np.asarray(kappa, float)
        raise


def kset_points(kset):
    if isinstance(kset, KGrid):
        return kset.points.reshape(-1, 2)
    if isinstance(kset, KPath):
        return kset.points
    return np.atleast_2d(np.asarray(kset, float))


def band_structure(field, kset, q, workers=None, seed=DEFAULT_SEED) -> list:
    """One :class:`BandSolution` per wave vector of ``kset`` (path, grid or array).

    Grids are flattened in row-major ``[i, j]`` order.
    """
    pts = kset_points(kset)
    if len(pts) == 0:
        raise ValueError("empty k-set")
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda k: solve_at(field, k, q, seed), pts))
    return [solve_at(field, k, q, seed) for k in pts]


def grid_solutions(field, kgrid: KGrid, q, workers=None, seed=DEFAULT_SEED, time_reversal=True):
    """Band solutions on every grid point, as an ``(Nk, Nk)`` object array.

    For real permittivity ``K(-kappa) = conj(K(kappa))``, so with ``time_reversal``
    only half of the grid is solved and the partner points get conjugated
    eigenvectors.  Requires an even ``Nk`` for the partner of each point to lie on
    the grid; odd grids are solved in full.
    """
    Nk = kgrid.Nk
    pts = kgrid.points
    out = np.empty((Nk, Nk), dtype=object)
    todo = []
    for i in range(Nk):
        for j in range(Nk):
            if time_reversal and Nk % 2 == 0:
                pi, pj = (Nk - i) % Nk, (Nk - j) % Nk
                if (pi, pj) < (i, j):
                    continue
            todo.append((i, j))
    sols = band_structure(field, np.array([pts[i, j] for i, j in todo]), q, workers, seed)
    for (i, j), s in zip(todo, sols):
        out[i, j] = s
    if time_reversal and Nk % 2 == 0:
        for i in range(Nk):
            for j in range(Nk):
                if out[i, j] is None:
                    # -kappa_ij = kappa_i'j' + G with G a reciprocal lattice vector
                    c = Nk // 2
                    a, b = (2 * c - i) // Nk, (2 * c - j) // Nk
                    s = out[(2 * c - i) % Nk, (2 * c - j) % Nk]
                    vecs = s.eigenvectors.conj()
                    if a or b:
                        G = a * field.lattice.b1 + b * field.lattice.b2
                        x = field.lattice.cell_centers(field.n).reshape(-1, 2)
                        vecs = np.exp(1j * x @ G)[:, None] * vecs
                    out[i, j] = BandSolution(pts[i, j].copy(), s.eigenvalues, vecs)
    return out


# ---------------------------------------------------------------------------
# gap statistics


def gap_measures(lam_l, lam_u):
    """``(J, G)``: relative gap in ``lambda`` and gap-to-midgap ratio in frequency."""
    J = 2.0 * (lam_u - lam_l) / (lam_u + lam_l)
    su, sl = np.sqrt(max(lam_u, 0.0)), np.sqrt(max(lam_l, 0.0))
    G = 2.0 * (su - sl) / (su + sl)
    return J, G


@dataclass(frozen=True)
class GapReport:
    m: int
    lambda_l: float
    lambda_u: float
    J: float
    G: float
    crystal_l: int
    kappa_l: tuple
    crystal_u: int
    kappa_u: tuple

    @property
    def is_open(self):
        return self.J > 0

    def as_dict(self):
        return {
            "m": self.m, "lambda_l": self.lambda_l, "lambda_u": self.lambda_u,
            "J": self.J, "G": self.G, "crystal_l": self.crystal_l,
            "kappa_l": list(self.kappa_l), "crystal_u": self.crystal_u,
            "kappa_u": list(self.kappa_u),
        }


def gap_report(bands1: Sequence[BandSolution], bands2: Sequence[BandSolution], m: int) -> GapReport:
    """Shared gap between band ``m`` and ``m + 1`` (1-based) of two crystals.

    ``J <= 0`` means no shared gap; this is reported, not raised.
    """
    best_l = (-np.inf, 0, None)
    best_u = (np.inf, 0, None)
    for c, bands in enumerate((bands1, bands2), start=1):
        for b in bands:
            if b.q < m + 1:
                raise ValueError(f"need at least {m + 1} bands, got {b.q}")
            if b.eigenvalues[m - 1] > best_l[0]:
                best_l = (b.eigenvalues[m - 1], c, b.kappa)
            if b.eigenvalues[m] < best_u[0]:
                best_u = (b.eigenvalues[m], c, b.kappa)
    lam_l, lam_u = float(best_l[0]), float(best_u[0])
    J, G = gap_measures(lam_l, lam_u)
    return GapReport(m, lam_l, lam_u, float(J), float(G), best_l[1], tuple(map(float, best_l[2])),
                     best_u[1], tuple(map(float, best_u[2])))
