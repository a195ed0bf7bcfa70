"""Linear-conic problem representation used by the gap optimizer.

A problem has a real decision vector ``x`` and

* objective ``maximize c . x``
* Hermitian LMI blocks ``B(x) = const + sum_v x_v T_v + sum cell terms``, each
  required to be ``>= 0`` (``sense=+1``) or ``<= 0`` (``sense=-1``)
* linear inequalities ``Gl x <= hl`` and equalities ``A x = b``.

Cell terms carry the permittivity variables: for eigenvector rows ``phi_c`` and
orbit ids ``o(c)`` the term is ``sign * sum_c w x_{o(c)} phi_c^H phi_c``, i.e.
``sign * Phi^H diag(w x_o) Phi``.  Keeping ``Phi`` instead of dense coefficient
matrices is what makes large problems tractable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import DegenerateScale, DegenerateValley


def realify(H):
    """Hermitian ``A + iB`` -> real symmetric ``[[A, -B], [B, A]]``."""
    A, B = H.real, H.imag
    return np.block([[A, -B], [B, A]])


def hermitian_part(H):
    return 0.5 * (H + H.conj().T)


@dataclass
class CellTerm:
    var: slice                 # slice of x holding one variable per orbit
    phi: np.ndarray            # (n_cells, k) complex
    weight: float              # quadrature weight per cell
    orbits: np.ndarray         # (n_cells,) orbit id of each cell
    sign: float = 1.0

    @property
    def n_orbits(self):
        return self.var.stop - self.var.start

    def matrix(self, xs):
        d = self.sign * self.weight * np.asarray(xs)[self.orbits]
        return self.phi.conj().T @ (d[:, None] * self.phi)

    def adjoint(self, Z):
        """Per-orbit ``Re tr(F_o Z)`` for a Hermitian ``Z`` (``F_o`` the orbit coefficient)."""
        v = np.sum((self.phi @ Z) * self.phi.conj(), axis=1).real
        return self.sign * self.weight * np.bincount(self.orbits, weights=v, minlength=self.n_orbits)

    def dense(self):
        """``(n_orbits, k, k)`` coefficient matrices."""
        k = self.phi.shape[1]
        out = np.zeros((self.n_orbits, k, k), dtype=complex)
        outer = self.phi.conj()[:, :, None] * self.phi[:, None, :]
        np.add.at(out, self.orbits, outer)
        return self.sign * self.weight * out

    def real_factors(self):
        """Vectors ``y1, y2`` (rows per cell) with
        ``realify(sign w phi_c^H phi_c) = sign * (y1 y1^T + y2 y2^T)``."""
        r, s = self.phi.real, self.phi.imag
        sw = np.sqrt(self.weight)
        return sw * np.hstack([r, -s]), sw * np.hstack([s, r])


@dataclass
class LmiBlock:
    size: int
    sense: int                               # +1: B(x) >= 0, -1: B(x) <= 0
    const: np.ndarray
    scalars: dict = field(default_factory=dict)   # var index -> Hermitian k x k
    cells: list = field(default_factory=list)
    label: str = ""

    def value(self, x):
        B = np.array(self.const, dtype=complex)
        for v, T in self.scalars.items():
            B = B + x[v] * T
        for t in self.cells:
            B = B + t.matrix(x[t.var])
        return hermitian_part(B)

    def slack(self, x):
        """Smallest eigenvalue of ``sense * B(x)``; nonnegative iff satisfied."""
        return float(np.linalg.eigvalsh(self.sense * self.value(x)).min())

    def scale(self):
        s = np.linalg.norm(self.const)
        for T in self.scalars.values():
            s = max(s, np.linalg.norm(T))
        return max(s, 1.0)


@dataclass
class SdpProblem:
    nvar: int
    c: np.ndarray
    lmis: list
    Gl: sp.csr_matrix
    hl: np.ndarray
    A: np.ndarray
    b: np.ndarray
    names: dict = field(default_factory=dict)     # name -> slice or index
    groups: list = field(default_factory=list)    # slices of per-crystal cell variables
    row_labels: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def objective(self, x):
        return float(self.c @ x)

    def residuals(self, x):
        """Constraint violations evaluated directly from the block data."""
        x = np.asarray(x, float)
        lmi = 0.0
        for blk in self.lmis:
            lmi = max(lmi, -blk.slack(x) / blk.scale())
        lin = float(np.max(self.Gl @ x - self.hl, initial=0.0)) if self.Gl.shape[0] else 0.0
        eq = float(np.max(np.abs(self.A @ x - self.b), initial=0.0)) if self.A.shape[0] else 0.0
        return {"lmi": max(lmi, 0.0), "linear": max(lin, 0.0), "equality": eq}

    def max_residual(self, x):
        return max(self.residuals(x).values())

    def unpack(self, x):
        return {k: (x[v].copy() if isinstance(v, slice) else float(x[v])) for k, v in self.names.items()}


@dataclass
class SdpIterate:
    x: np.ndarray
    status: str
    objective: float
    values: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status in ("optimal", "optimal_inaccurate")

    @property
    def eps_tilde(self):
        return [self.values[k] for k in sorted(self.values) if k.startswith("eps")]

    @property
    def alpha(self):
        return self.values.get("alpha")

    @property
    def beta(self):
        return self.values.get("beta")

    @property
    def theta(self):
        return self.values.get("theta")


# ---------------------------------------------------------------------------
# spectral projectors and the LMI blocks built from them


@dataclass
class Projector:
    kappa: np.ndarray
    crystal: int
    Phi: np.ndarray        # (N, m) eigenvectors of bands 1..m
    Psi: np.ndarray        # (N, s) eigenvectors of bands m+1..m+s
    lam_lower: np.ndarray
    lam_upper: np.ndarray

    def check(self, mdiag, tol=1e-8):
        I = np.eye
        P, Q = self.Phi, self.Psi
        errs = [np.abs(P.conj().T @ (mdiag[:, None] * P) - I(P.shape[1])).max(),
                np.abs(Q.conj().T @ (mdiag[:, None] * Q) - I(Q.shape[1])).max(),
                np.abs(P.conj().T @ (mdiag[:, None] * Q)).max() if P.size and Q.size else 0.0]
        return max(errs) <= tol


def projector(solution, crystal, m, s):
    return Projector(np.asarray(solution.kappa, float), crystal,
                     solution.eigenvectors[:, :m], solution.eigenvectors[:, m:m + s],
                     solution.eigenvalues[:m], solution.eigenvalues[m:m + s])


def lower_block(proj: Projector, K, orbits, weight, alpha_index, eps_slice, kscale=1.0, label=""):
    """``alpha * Phi^H K Phi - sum_o eps_o Phi^H W_o Phi <= 0``.

    ``kscale`` divides the stiffness term; it lets the caller work with rescaled
    permittivity variables.
    """
    Phi = proj.Phi
    KPhi = hermitian_part(Phi.conj().T @ (K @ Phi)) / kscale
    m = Phi.shape[1]
    return LmiBlock(m, -1, np.zeros((m, m), complex), {alpha_index: KPhi},
                    [CellTerm(eps_slice, Phi, weight, orbits, -1.0)], label)


def upper_block(proj: Projector, K, orbits, weight, beta_index, eps_slice, kscale=1.0, label=""):
    """``beta * Psi^H K Psi - sum_o eps_o Psi^H W_o Psi >= 0``."""
    Psi = proj.Psi
    KPsi = hermitian_part(Psi.conj().T @ (K @ Psi)) / kscale
    s = Psi.shape[1]
    return LmiBlock(s, +1, np.zeros((s, s), complex), {beta_index: KPsi},
                    [CellTerm(eps_slice, Psi, weight, orbits, -1.0)], label)


# ---------------------------------------------------------------------------
# topological rows, tau schedule, recovery


def tau(p, tau0=0.5, r=0.5):
    """Relaxation budget of outer step ``p``: ``(1 - tau0)(1 - r) r^p``."""
    if not (0 < tau0 <= 1) or not (0 < r < 1):
        raise ValueError("need 0 < tau0 <= 1 and 0 < r < 1")
    return (1.0 - tau0) * (1.0 - r) * r**p


@dataclass
class TopoRow:
    """``coef . x <= rhs``, the linearized curvature-sign constraint in ``Gl`` form."""

    var: slice
    coef: np.ndarray
    rhs: float
    label: str


def topo_rows(sensitivities, F_current, F_initial, tau_p, theta_prev, eps_slice, orbits,
              x_prev, label="topo"):
    """Linearized constraints ``sgn(F) <d_eps, g> + tau_p |F0| >= 0``.

    ``sensitivities[j]`` is the gradient field at valley ``j`` (an ``(n, n)`` array
    ``g`` and cell weight ``w``, see :class:`~topogap.topo.SensitivityField`),
    ``d_eps = (x - x_prev) / theta_prev`` in orbit variables.
    """
    rows = []
    n_orb = eps_slice.stop - eps_slice.start
    for j, (sf, F, F0) in enumerate(zip(sensitivities, F_current, F_initial)):
        if abs(F0) < 1e-10:
            raise DegenerateValley(f"initial curvature {F0:.3e} at valley {j} is too small")
        gw = np.bincount(orbits, weights=sf.g.ravel() * sf.weight, minlength=n_orb)
        sgn = np.sign(F) if F != 0 else np.sign(F0)
        # sgn/theta * gw . (x - x_prev) + tau |F0| >= 0
        coef = -sgn / theta_prev * gw
        rhs = tau_p * np.sign(F0) * F0 - sgn / theta_prev * gw @ x_prev
        rows.append(TopoRow(eps_slice, coef, float(rhs), f"{label}[{j}]"))
    return rows


def recover(eps_tilde, theta, orbits, like):
    """Fields ``eps = eps_tilde / theta`` expanded to cells and clamped."""
    if theta is None or not theta > 1e-10:
        raise DegenerateScale(f"theta={theta!r} too small to recover a permittivity")
    vals = (np.asarray(eps_tilde) / theta)[np.asarray(orbits).ravel()].reshape(like.n, like.n)
    return like.with_values(np.clip(vals, like.eps_lo, like.eps_hi))


def orbit_values(field, orbits):
    """Per-orbit mean of a field (inverse of the cell expansion for symmetric fields)."""
    ids = np.asarray(orbits).ravel()
    return np.bincount(ids, weights=field.values.ravel()) / np.bincount(ids)


# ---------------------------------------------------------------------------
# min-max characterization of a single eigenvalue


def minmax_problem(K, M, V, kind):
    """SDP whose optimum is an eigenvalue of the pencil ``(K, M)``.

    ``kind="lower"``: minimize ``lam`` s.t. ``V^H (K - lam M) V <= 0`` (``V`` spans the
    first ``k`` eigenvectors; optimum ``lambda_k``).  ``kind="upper"``: maximize ``lam``
    s.t. ``V^H (K - lam M) V >= 0`` (``V`` spans the complement; optimum
    ``lambda_{k+1}``).
    """
    KV = hermitian_part(V.conj().T @ K @ V)
    MV = hermitian_part(V.conj().T @ M @ V)
    k = V.shape[1]
    if kind == "lower":
        blk = LmiBlock(k, -1, KV, {0: -MV}, [], "lower")
        c = np.array([-1.0])
    elif kind == "upper":
        blk = LmiBlock(k, +1, KV, {0: -MV}, [], "upper")
        c = np.array([1.0])
    else:
        raise ValueError(kind)
    return SdpProblem(1, c, [blk], sp.csr_matrix((0, 1)), np.zeros(0), np.zeros((0, 1)), np.zeros(0),
                      names={"lam": 0})
