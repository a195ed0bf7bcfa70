"""Discrete Berry curvature, Chern and valley Chern numbers, Wilson loops and the
adjoint sensitivity of the plaquette curvature with respect to the permittivity.

Inner product: ``<a, b> = sum_c eps_c w a_c conj(b_c) = b^H M a``.  For a band set
with eigenvector columns ``P_j`` at corner ``j`` the link matrix is
``S_j[a, b] = <phi^a_j, phi^b_{j+1}> = conj(P_j^H M P_{j+1})[a, b]`` and the
plaquette curvature is ``-Im ln prod_j det S_j / area``.

Eigenvectors are used in the periodic gauge: when a loop wraps by a reciprocal
vector ``G`` the eigenvector at ``kappa + G`` is taken to be
``exp(-i G . x) phi(kappa)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bloch import BandSolution, assemble, eigensolve, grid_solutions
from .errors import QuantizationFailure, SingularOverlap, SingularSystem
from .lattice import KGrid

SINGULAR_OVERLAP = 1e-10


def band_indices(bands):
    """1-based band spec (int, range or sequence) -> 0-based index array."""
    if isinstance(bands, (int, np.integer)):
        bands = [int(bands)]
    idx = np.asarray(list(bands), dtype=int) - 1
    if idx.size == 0 or idx.min() < 0:
        raise ValueError(f"invalid band set {bands!r}")
    return idx


def polygon_area(corners):
    c = np.asarray(corners, float)
    x, y = c[:, 0], c[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def gauge_phase(lattice, n, G):
    """``exp(-i G . x)`` on the cell centers (flattened); maps ``phi(kappa)`` to the
    periodic-gauge eigenvector at ``kappa + G``."""
    x = lattice.cell_centers(n).reshape(-1, 2)
    return np.exp(-1j * x @ np.asarray(G, float))


def link(Pa, Pb, mdiag):
    """``P_a^H M P_b`` (the complex conjugate of the overlap matrix ``S``)."""
    return Pa.conj().T @ (mdiag[:, None] * Pb)


def _det_checked(L):
    d = np.linalg.det(L) if L.shape[0] > 1 else L[0, 0]
    if abs(d) < SINGULAR_OVERLAP:
        raise SingularOverlap(f"overlap determinant {abs(d):.2e} below {SINGULAR_OVERLAP:g}; "
                              "refine the k-grid or check for a band crossing")
    return d


def loop_phase(vectors, mdiag):
    """Berry phase ``-Im ln prod_j det S_j`` of a closed loop of eigenvector blocks.

    ``vectors`` lists the blocks at the loop corners in order; the last block
    connects back to the first (apply any gauge factor beforehand).
    """
    prod = 1.0 + 0j
    k = len(vectors)
    for j in range(k):
        d = _det_checked(link(vectors[j], vectors[(j + 1) % k], mdiag))
        prod *= d / abs(d)
    # S = conj(link) so -Im ln det S = +angle(det link)
    return float(np.angle(prod))


def _solve_corners(field, corners, q, solutions=None):
    if solutions is not None:
        return list(solutions)
    return [eigensolve(assemble(field, k), q) for k in corners]


def plaquette_curvature(field, bands, corners, solutions=None, form="det"):
    """Discrete Berry curvature of a band set on one counter-clockwise plaquette.

    ``form="det"`` uses determinants of the overlap matrices of the whole set;
    ``form="sum"`` adds the single-band curvatures of its members.  They agree for a
    single band.
    """
    idx = band_indices(bands)
    corners = np.asarray(corners, float)
    sols = _solve_corners(field, corners, idx.max() + 1, solutions)
    mdiag = field.values.ravel() * field.cell_weight
    area = polygon_area(corners)
    if form == "det":
        return loop_phase([s.eigenvectors[:, idx] for s in sols], mdiag) / area
    if form == "sum":
        return sum(loop_phase([s.eigenvectors[:, [b]] for s in sols], mdiag) for b in idx) / area
    raise ValueError(f"unknown form {form!r}")


def plaquette_corners(center, kgrid: KGrid):
    """Counter-clockwise corners of a grid-sized plaquette centered at ``center``."""
    d1, d2 = kgrid.spacing
    c = np.asarray(center, float)
    return np.array([c - 0.5 * d1 - 0.5 * d2, c + 0.5 * d1 - 0.5 * d2,
                     c + 0.5 * d1 + 0.5 * d2, c - 0.5 * d1 + 0.5 * d2])


# ---------------------------------------------------------------------------
# curvature on the whole Brillouin zone


@dataclass(frozen=True, eq=False)
class CurvatureField:
    """Plaquette Berry phases on a k-grid.  ``phases[i, j]`` belongs to the plaquette
    with lower-left corner ``kgrid.point(i, j)``; the curvature is ``phases / area``."""

    kgrid: KGrid
    bands: tuple
    phases: np.ndarray
    area: float

    @property
    def values(self):
        return self.phases / self.area

    @property
    def centers(self):
        return self.kgrid.plaquette_centers

    @property
    def total(self):
        return float(self.phases.sum() / (2 * np.pi))


def curvature_field(field, bands, kgrid: KGrid, solutions=None, workers=None, form="det"):
    idx = band_indices(bands)
    Nk = kgrid.Nk
    if solutions is None:
        solutions = grid_solutions(field, kgrid, idx.max() + 1, workers)
    mdiag = field.values.ravel() * field.cell_weight
    lat = field.lattice
    # gauge factors for the wrapped edges
    g1 = gauge_phase(lat, field.n, lat.b1)[:, None]
    g2 = gauge_phase(lat, field.n, lat.b2)[:, None]

    def block(i, j, b):
        s = solutions[i % Nk, j % Nk].eigenvectors[:, b]
        if i >= Nk:
            s = g1 * s
        if j >= Nk:
            s = g2 * s
        return s

    sets = [idx] if form == "det" else [[b] for b in idx]
    phases = np.zeros((Nk, Nk))
    for i in range(Nk):
        for j in range(Nk):
            for b in sets:
                phases[i, j] += loop_phase([block(i, j, b), block(i + 1, j, b),
                                            block(i + 1, j + 1, b), block(i, j + 1, b)], mdiag)
    return CurvatureField(kgrid, tuple(int(b) + 1 for b in idx), phases, kgrid.plaquette_area)


def chern(field, bands, kgrid: KGrid, solutions=None, curvature=None, tol=0.05):
    """Chern number of a band set and the distance of the raw sum from it."""
    cf = curvature if curvature is not None else curvature_field(field, bands, kgrid, solutions)
    raw = cf.total
    c = int(np.round(raw))
    residual = abs(raw - c)
    if residual > tol:
        raise QuantizationFailure(f"Chern sum {raw:.4f} is not close to an integer", residual)
    return c, residual


def valley_integrals(cf: CurvatureField, k1, k2, radius=None):
    """Integrated curvature / 2 pi over the plaquettes centered within ``radius``
    (periodic distance) of each valley point."""
    lat = cf.kgrid.lattice
    if radius is None:
        radius = np.linalg.norm(lat.b1) / 4
    centers = cf.centers
    out = []
    for k in (k1, k2):
        mask = lat.periodic_k_distance(centers, k) < radius
        out.append(float(cf.phases[mask].sum() / (2 * np.pi)))
    return tuple(out)


def valley_chern(field, m, k1, k2, radius=None, kgrid=None, curvature=None, solutions=None):
    """``sgn(C(k1) - C(k2))`` for the gap above band ``m`` (0 if the two valley
    integrals agree to 1e-8)."""
    if np.allclose(k1, k2):
        raise ValueError("valley points must differ")
    cf = curvature if curvature is not None else curvature_field(field, range(1, m + 1), kgrid, solutions)
    c1, c2 = valley_integrals(cf, k1, k2, radius)
    d = c1 - c2
    return 0 if abs(d) < 1e-8 else int(np.sign(d))


# ---------------------------------------------------------------------------
# Wilson loops


@dataclass(frozen=True)
class WilsonSpectrum:
    kappa1: np.ndarray          # (n_samples,)
    phases: np.ndarray          # (n_samples, m), each row sorted, values in (-pi, pi]


def wilson_loop(field, bands, kappa1, N, solutions=None, origin=(0.5, 0.5)):
    """Wilson-loop eigenphases along ``b2`` for each base point ``kappa1 * b1/|b1|``.

    ``kappa1`` may be a scalar or an array; the loop uses ``N`` points
    ``kappa1 + (j/N) b2`` and closes with the periodic-gauge image of the first.
    Phases are Wannier-center positions along ``e2`` (times ``-2 pi``) measured from
    ``origin`` (fractional coordinates); the default is the cell centroid, the
    rotation center of the symmetry groups.
    """
    if N < 8:
        raise ValueError("N must be >= 8")
    idx = band_indices(bands)
    lat = field.lattice
    mdiag = field.values.ravel() * field.cell_weight
    x0 = lat.E @ np.asarray(origin, float)
    gclose = (gauge_phase(lat, field.n, lat.b2) * np.exp(1j * lat.b2 @ x0))[:, None]
    k1s = np.atleast_1d(np.asarray(kappa1, float))
    b1hat = lat.b1 / np.linalg.norm(lat.b1)
    out = []
    for s, k1 in enumerate(k1s):
        pts = [k1 * b1hat + (j / N) * lat.b2 for j in range(N)]
        sols = solutions[s] if solutions is not None else [eigensolve(assemble(field, k), idx.max() + 1) for k in pts]
        blocks = [sol.eigenvectors[:, idx] for sol in sols]
        blocks.append(gclose * blocks[0])
        out.append(_open_chain_phases(blocks, mdiag))
    return WilsonSpectrum(k1s, np.array(out))


def _open_chain_phases(blocks, mdiag):
    S = np.eye(blocks[0].shape[1], dtype=complex)
    for a, b in zip(blocks[:-1], blocks[1:]):
        L = link(a, b, mdiag)
        _det_checked(L)
        S = S @ L.conj()
    ph = -np.angle(np.linalg.eigvals(S))
    ph[ph <= -np.pi] += 2 * np.pi
    return np.sort(ph)


# ---------------------------------------------------------------------------
# adjoint sensitivity


class AdjointSolver:
    """Factorized regularized adjoint operator for one eigenpair ``(lam, phi)``.

    Solves ``(lam M - K) u + t M phi (phi^H M u) = M rhs`` through the sparse
    bordered system ``[[lam M - K, M phi], [(M phi)^H, -1/t]]``.
    """

    def __init__(self, op, lam, phi, t=None):
        self.lam = float(lam)
        self.t = 2.0 * self.lam if t is None else float(t)
        scale = abs(op.K).max()
        if not self.t > 1e-12 * scale:
            raise SingularSystem(f"regularization t={self.t:.3e} too small (eigenvalue near zero)")
        self.op = op
        self.phi = phi
        N = op.size
        Mphi = op.mdiag * phi
        A = sp.bmat([[self.lam * op.M - op.K, sp.csc_matrix(Mphi[:, None])],
                     [sp.csc_matrix(Mphi.conj()[None, :]), sp.csc_matrix([[-1.0 / self.t]])]],
                    format="csc")
        try:
            self.lu = spla.splu(A.astype(complex), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SingularSystem(f"regularized adjoint matrix is singular: {exc}") from exc
        self.N = N

    def solve(self, rhs):
        b = np.zeros(self.N + 1, dtype=complex)
        b[: self.N] = self.op.mdiag * rhs
        x = self.lu.solve(b)
        u = x[: self.N]
        if not np.all(np.isfinite(u)):
            raise SingularSystem("non-finite adjoint solution")
        return u


def solve_adjoint(op, omega, phi, rhs, t=None):
    """Solution ``u`` of the regularized adjoint problem with ``t = 2 omega^2``.

    ``u`` satisfies ``(lam M - K) u = M (rhs - <rhs, phi> phi)`` and
    ``t <u, phi> = <rhs, phi>``.
    """
    return AdjointSolver(op, omega**2, phi, t).solve(rhs)


@dataclass(frozen=True, eq=False)
class SensitivityField:
    """Gradient of a plaquette curvature with respect to the cell permittivities.

    The first-order change for a perturbation ``d_eps`` is
    ``sum_c d_eps[c] * g[c] * weight``; see :meth:`directional`.
    """

    corners: np.ndarray
    bands: tuple
    g: np.ndarray
    weight: float
    value: float

    def directional(self, d_eps):
        return float(np.sum(np.asarray(d_eps) * self.g) * self.weight)


def _loop_gradient(ops, sols, idx, t_floor):
    """Complex per-cell density ``D`` with ``d ln prod_j det S_j = sum_c d_eps_c w D_c``."""
    k = len(ops)
    D = np.zeros(ops[0].size, dtype=complex)
    P = [s.eigenvectors[:, idx] for s in sols]
    lam = [s.eigenvalues[idx] for s in sols]
    solvers = {}

    def solver(j, a):
        if (j, a) not in solvers:
            l = lam[j][a]
            t = 2.0 * l if 2.0 * l > t_floor else t_floor
            solvers[(j, a)] = AdjointSolver(ops[j], l, P[j][:, a], t)
        return solvers[(j, a)]

    for j in range(k):
        jn = (j + 1) % k
        Pa, Pb = P[j], P[jn]
        mdiag = ops[j].mdiag
        S = link(Pa, Pb, mdiag).conj()
        _det_checked(S)
        Sinv = np.linalg.inv(S)
        chi = Pb @ Sinv.conj()          # chi[:, a] = sum_b conj(Sinv[b, a]) phi^b_{j+1}
        eta = Pa @ Sinv.T               # eta[:, b] = sum_a Sinv[b, a] phi^a_j
        for a in range(len(idx)):
            sv = solver(j, a)
            u = sv.solve(chi[:, a])
            phi = Pa[:, a]
            D += -sv.lam * phi * u.conj()
            proj = np.vdot(mdiag * phi, chi[:, a]).conj()      # <phi, chi>
            D += proj * (sv.lam / sv.t - 0.5) * np.abs(phi) ** 2
        for b in range(len(idx)):
            sv = solver(jn, b)
            v = sv.solve(eta[:, b])
            phi = Pb[:, b]
            D += -sv.lam * v * phi.conj()
            proj = np.vdot(mdiag * phi, eta[:, b])            # conj(<phi, eta>)
            D += proj * (sv.lam / sv.t - 0.5) * np.abs(phi) ** 2
        D += np.sum(Pa * chi.conj(), axis=1)
    return D


def curvature_sensitivity(field, bands, corners, solutions=None, form="sum") -> SensitivityField:
    """Adjoint gradient of the plaquette curvature with respect to ``eps``.

    ``form="sum"`` differentiates the sum of single-band curvatures of the set;
    ``form="det"`` differentiates the determinant form used by
    :func:`plaquette_curvature` with its default.
    """
    idx = band_indices(bands)
    corners = np.asarray(corners, float)
    ops = [assemble(field, k) for k in corners]
    sols = list(solutions) if solutions is not None else [eigensolve(op, idx.max() + 1) for op in ops]
    area = polygon_area(corners)
    # floor for the regularization when an eigenvalue vanishes (band 1 at Gamma)
    scale = max(float(np.max(s.eigenvalues[idx])) for s in sols)
    t_floor = 1e-3 * max(scale, 1.0)
    if form == "det":
        D = _loop_gradient(ops, sols, idx, t_floor)
    elif form == "sum":
        D = sum(_loop_gradient(ops, sols, np.array([b]), t_floor) for b in idx)
    else:
        raise ValueError(f"unknown form {form!r}")
    g = -np.imag(D) / area
    value = plaquette_curvature(field, bands, corners, sols, form=form)
    return SensitivityField(corners, tuple(int(b) + 1 for b in idx), g.reshape(field.n, field.n),
                            field.cell_weight, value)
