"""Conic solver backends.

``cvxopt``
    The primal-dual interior point method of :func:`cvxopt.solvers.conelp` with a
    problem-specific KKT solver.  The Hermitian LMIs are realified; the Newton
    system ``H = G^T W^{-1} W^{-T} G`` is block-arrow shaped (one dense block per
    crystal, a few shared scalars), which is factored block by block.
``cvxopt-dense``
    The same method with dense ``G`` and cvxopt's generic KKT solver.  Only for
    small problems and cross-checks.
``clarabel``
    An independent interior point code (Clarabel), also dense-ish; for
    cross-checks and small problems.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg.blas import dsyrk

from .problem import SdpIterate, SdpProblem, realify

log = logging.getLogger(__name__)

BACKENDS = ("cvxopt", "cvxopt-dense", "clarabel")


def solve(problem: SdpProblem, backend="cvxopt", **opts) -> SdpIterate:
    """Solve and return an :class:`SdpIterate`; failures are reported in ``status``
    (``infeasible``, ``unbounded``, ``numerical_failure``), never raised."""
    if backend == "cvxopt":
        return _solve_cvxopt(problem, structured=True, **opts)
    if backend == "cvxopt-dense":
        return _solve_cvxopt(problem, structured=False, **opts)
    if backend == "clarabel":
        return _solve_clarabel(problem, **opts)
    raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")


# ---------------------------------------------------------------------------
# helpers shared by the cvxopt paths


def _tril_sym(X):
    """Symmetric matrix from the lower triangle of ``X``."""
    L = np.tril(X)
    return L + np.tril(X, -1).T


def _svec_index(k):
    i, j = np.tril_indices(k)
    scale = np.where(i == j, 1.0, np.sqrt(2.0))
    return i, j, scale


class _Layout:
    """Realified conic form ``G x + s = h`` of an :class:`SdpProblem`.

    cvxopt's ``s`` cones are stored column-major with only the lower triangle
    significant; LMI ``B(x)`` with sense ``sigma`` becomes ``s = sigma B(x)``, so
    ``G x = -sigma (B(x) - B(0))`` and ``h = sigma B(0)``.
    """

    def __init__(self, prob: SdpProblem):
        self.prob = prob
        self.nl = prob.Gl.shape[0]
        self.sizes = [2 * b.size for b in prob.lmis]
        self.offsets = np.cumsum([self.nl] + [k * k for k in self.sizes])
        self.m = int(self.offsets[-1])
        self.Gl = sp.csr_matrix(prob.Gl)
        self.GlT = self.Gl.T.tocsr()
        h = np.zeros(self.m)
        h[: self.nl] = prob.hl
        for b, blk in enumerate(prob.lmis):
            h[self.offsets[b]: self.offsets[b + 1]] = (blk.sense * realify(blk.const)).ravel(order="F")
        self.h = h

    def block_slice(self, b):
        return slice(self.offsets[b], self.offsets[b + 1])

    def G_block(self, b, x):
        """``G_b x`` as a real symmetric matrix."""
        blk = self.prob.lmis[b]
        B = np.zeros((blk.size, blk.size), complex)
        for v, T in blk.scalars.items():
            B += x[v] * T
        for t in blk.cells:
            B += t.matrix(x[t.var])
        return -blk.sense * realify(B)

    def G(self, x):
        out = np.empty(self.m)
        out[: self.nl] = self.Gl @ x
        for b, k in enumerate(self.sizes):
            out[self.block_slice(b)] = self.G_block(b, x).ravel(order="F")
        return out

    def GT(self, z):
        out = self.GlT @ z[: self.nl] if self.nl else np.zeros(self.prob.nvar)
        out = np.array(out, dtype=float)
        for b, k in enumerate(self.sizes):
            Z = _tril_sym(z[self.block_slice(b)].reshape(k, k, order="F"))
            self.add_GT_block(b, Z, out)
        return out

    def add_GT_block(self, b, Z, out):
        blk = self.prob.lmis[b]
        s = blk.size
        # <realify(T), Z> = 2 Re tr(T Zc) with Zc the Hermitian matrix represented by Z
        Zc = 0.5 * ((Z[:s, :s] + Z[s:, s:]) + 1j * (Z[s:, :s] - Z[:s, s:]))
        for v, T in blk.scalars.items():
            out[v] += -blk.sense * 2.0 * np.real(np.sum(T * Zc.T))
        for t in blk.cells:
            out[t.var] += -blk.sense * 2.0 * t.adjoint(Zc)


def _status(sol):
    st = sol["status"]
    if st == "optimal":
        return "optimal"
    if st == "primal infeasible":
        return "infeasible"
    if st == "dual infeasible":
        return "unbounded"
    return "numerical_failure"


def _finish(prob, x, status, info, accept_tol):
    x = np.asarray(x, float).ravel()
    if status == "numerical_failure" and np.all(np.isfinite(x)):
        # accept an unconverged point only when it is verifiably feasible
        if prob.max_residual(x) <= accept_tol:
            status = "optimal_inaccurate"
    info["residuals"] = prob.residuals(x) if np.all(np.isfinite(x)) else None
    return SdpIterate(x, status, prob.objective(x), prob.unpack(x), info)


# ---------------------------------------------------------------------------
# cvxopt


def _solve_cvxopt(prob: SdpProblem, structured=True, abstol=1e-8, reltol=1e-7, feastol=1e-8,
                  maxiters=100, verbose=False, accept_tol=1e-7, initvals=None):
    from cvxopt import matrix, solvers

    lay = _Layout(prob)
    n = prob.nvar
    dims = {"l": lay.nl, "q": [], "s": lay.sizes}
    c = matrix(-np.asarray(prob.c, float))
    h = matrix(lay.h)
    A_np = np.asarray(prob.A, float).reshape(-1, n)
    A = matrix(A_np) if A_np.shape[0] else matrix(0.0, (0, n))
    b = matrix(np.asarray(prob.b, float)) if A_np.shape[0] else matrix(0.0, (0, 1))
    options = {"show_progress": verbose, "abstol": abstol, "reltol": reltol,
               "feastol": feastol, "maxiters": maxiters}
    kwargs = {}
    if structured:
        def Gf(x, y, alpha=1.0, beta=0.0, trans="N"):
            xv = np.array(x).ravel()
            yv = np.array(y).ravel()
            if trans == "N":
                res = alpha * lay.G(xv) + beta * yv
            else:
                res = alpha * lay.GT(xv) + beta * yv
            y[:] = matrix(res)

        def Af(x, y, alpha=1.0, beta=0.0, trans="N"):
            xv = np.array(x).ravel()
            yv = np.array(y).ravel()
            res = alpha * (A_np @ xv if trans == "N" else A_np.T @ xv) + beta * yv
            y[:] = matrix(res)

        G = Gf
        kwargs["kktsolver"] = lambda W: _StructuredKkt(lay, A_np, W).solve
        A_arg = Af
    else:
        Gd = np.zeros((lay.m, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            Gd[:, j] = lay.G(e)
        G = matrix(Gd)
        A_arg = A
    info = {"backend": "cvxopt" if structured else "cvxopt-dense"}
    try:
        sol = solvers.conelp(c, G, h, dims, A_arg, b, options=options, **kwargs)
    except (ArithmeticError, ValueError) as exc:
        log.warning("cvxopt failed: %s", exc)
        info["message"] = str(exc)
        return SdpIterate(np.full(n, np.nan), "numerical_failure", float("nan"), {}, info)
    info.update(iterations=sol.get("iterations"), gap=sol.get("gap"),
                primal_infeasibility=sol.get("primal infeasibility"),
                dual_infeasibility=sol.get("dual infeasibility"), raw_status=sol["status"])
    status = _status(sol)
    if status in ("infeasible", "unbounded"):
        return SdpIterate(np.full(n, np.nan), status, float("nan"), {}, info)
    x = np.array(sol["x"]).ravel()
    return _finish(prob, x, status, info, accept_tol)


class _StructuredKkt:
    """Factorization of the cvxopt KKT system for block-arrow problems.

    Variables are split into ``groups`` (per-crystal permittivity variables, which
    only interact with themselves and the shared scalars) and the shared rest.
    """

    def __init__(self, lay: _Layout, A, W):
        self.lay = lay
        prob = lay.prob
        n = prob.nvar
        self.A = A
        self.d = np.array(W["d"]).ravel()
        self.rti = [np.array(r) for r in W["rti"]]
        groups = list(prob.groups)
        in_group = np.zeros(n, dtype=bool)
        for g in groups:
            in_group[g] = True
        self.groups = groups
        self.shared = np.flatnonzero(~in_group)
        ns = len(self.shared)
        # scaled linear rows; the few dense ones (topological rows) are kept apart
        Gls = (sp.diags(1.0 / self.d) @ lay.Gl).tocsr() if lay.nl else sp.csr_matrix((0, n))
        dense_rows = np.flatnonzero(np.diff(Gls.indptr) > 16)
        sparse_rows = np.setdiff1d(np.arange(Gls.shape[0]), dense_rows)
        Gsp = Gls[sparse_rows]
        Hlin = (Gsp.T @ Gsp).tocsr()
        # per-group dense blocks, coupling to shared, shared block
        Hg = [Hlin[g, g].toarray() for g in groups]
        Hgs = [Hlin[g][:, self.shared].toarray() for g in groups]
        Hss = Hlin[self.shared][:, self.shared].toarray()
        if len(dense_rows):
            Dr = Gls[dense_rows].toarray()
            Ds = Dr[:, self.shared]
            for q, g in enumerate(groups):
                Dg = Dr[:, g]
                Hg[q] += Dg.T @ Dg
                Hgs[q] += Dg.T @ Ds
            Hss += Ds.T @ Ds
        rows_g = [[] for _ in groups]
        rows_gs = [[] for _ in groups]
        rows_s = []
        self.svecs = {}
        spos = {int(v): k for k, v in enumerate(self.shared)}
        for b, blk in enumerate(prob.lmis):
            k = lay.sizes[b]
            R = self.rti[b]
            ii, jj, sc = _svec_index(k)
            # shared-variable columns of the scaled block
            Cs = np.zeros((len(ii), ns))
            for v, T in blk.scalars.items():
                M = -blk.sense * (R.T @ realify(T) @ R)
                Cs[:, spos[int(v)]] = M[ii, jj] * sc
            gidx = None
            Cg = None
            for t in blk.cells:
                gi = next(q for q, g in enumerate(groups) if g.start <= t.var.start < g.stop)
                if gidx is not None and gi != gidx:
                    raise ValueError("an LMI block may touch only one variable group")
                gidx = gi
                y1, y2 = t.real_factors()
                y1 = y1 @ R
                y2 = y2 @ R
                cell_cols = (y1[:, ii] * y1[:, jj] + y2[:, ii] * y2[:, jj]) * sc  # (cells, t)
                cell_cols *= -blk.sense * t.sign
                off = t.var.start - groups[gi].start
                ng = groups[gi].stop - groups[gi].start
                agg = np.zeros((len(ii), ng))
                P = sp.csr_matrix((np.ones(len(t.orbits)), (t.orbits + off, np.arange(len(t.orbits)))),
                                  shape=(ng, len(t.orbits)))
                agg += (P @ cell_cols).T
                Cg = agg if Cg is None else Cg + agg
            if gidx is None:
                rows_s.append(Cs)
            else:
                rows_g[gidx].append(Cg)
                rows_gs[gidx].append(Cs)
            self.svecs[b] = (ii, jj, sc)
        for q in range(len(groups)):
            if rows_g[q]:
                Xg = np.vstack(rows_g[q])
                Xs = np.vstack(rows_gs[q])
                # only the lower triangle of Hg is referenced by the Cholesky factorization
                Hg[q] += _syrk(Xg)
                Hgs[q] += Xg.T @ Xs
                Hss += Xs.T @ Xs
        for Cs in rows_s:
            Hss += Cs.T @ Cs
        self.Hgs = Hgs
        self.chol = []
        self.Xg = []
        S = Hss.copy()
        for q in range(len(groups)):
            try:
                cf = sla.cho_factor(Hg[q], lower=True, check_finite=False)
            except sla.LinAlgError as exc:
                raise ArithmeticError(f"KKT block {q} not positive definite") from exc
            self.chol.append(cf)
            X = sla.cho_solve(cf, Hgs[q], check_finite=False)
            self.Xg.append(X)
            S -= Hgs[q].T @ X
        As = A[:, self.shared] if A.shape[0] else np.zeros((0, ns))
        if A.shape[0] and np.any(np.delete(A, self.shared, axis=1)):
            raise ValueError("equality constraints may involve shared variables only")
        p = As.shape[0]
        Ks = np.zeros((ns + p, ns + p))
        Ks[:ns, :ns] = S
        Ks[:ns, ns:] = As.T
        Ks[ns:, :ns] = As
        self.ns, self.p = ns, p
        try:
            self.Ks = sla.lu_factor(Ks, check_finite=False)
        except (sla.LinAlgError, ValueError) as exc:
            raise ArithmeticError("singular reduced KKT system") from exc
        if not np.all(np.isfinite(self.Ks[0])) or np.min(np.abs(np.diag(self.Ks[0]))) == 0:
            raise ArithmeticError("singular reduced KKT system")

    def _scale_Winv_T(self, zvec):
        """``W^{-T} z`` (cone-wise), returning the flat vector in full storage."""
        lay = self.lay
        out = np.empty_like(zvec)
        out[: lay.nl] = zvec[: lay.nl] / self.d
        for b, k in enumerate(lay.sizes):
            Z = _tril_sym(zvec[lay.block_slice(b)].reshape(k, k, order="F"))
            R = self.rti[b]
            out[lay.block_slice(b)] = (R.T @ Z @ R).ravel(order="F")
        return out

    def solve(self, x, y, z):
        from cvxopt import matrix

        lay = self.lay
        bx = np.array(x).ravel()
        by = np.array(y).ravel()
        bz = np.array(z).ravel()
        wbz = self._scale_Winv_T(bz)
        # r = bx + G^T W^{-1} W^{-T} bz
        r = bx + self._GsT(wbz)
        ux = np.empty_like(bx)
        rs = r[self.shared].copy()
        tg = []
        for q, g in enumerate(self.groups):
            t = sla.cho_solve(self.chol[q], r[g], check_finite=False)
            tg.append(t)
            rs -= self.Hgs[q].T @ t
        sol = sla.lu_solve(self.Ks, np.concatenate([rs, by]), check_finite=False)
        us, uy = sol[: self.ns], sol[self.ns:]
        ux[self.shared] = us
        for q, g in enumerate(self.groups):
            ux[g] = tg[q] - self.Xg[q] @ us
        Wuz = self._scale_Winv_T(lay.G(ux) - bz)
        x[:] = matrix(ux)
        if self.p:
            y[:] = matrix(uy)
        z[:] = matrix(Wuz)

    def _GsT(self, wz):
        """``(W^{-T} G)^T wz`` for ``wz`` already in the scaled space."""
        lay = self.lay
        out = np.zeros(lay.prob.nvar)
        if lay.nl:
            out += lay.GlT @ (wz[: lay.nl] / self.d)
        for b, k in enumerate(lay.sizes):
            Zs = _tril_sym(wz[lay.block_slice(b)].reshape(k, k, order="F"))
            R = self.rti[b]
            lay.add_GT_block(b, R @ Zs @ R.T, out)
        return out


def _syrk(X):
    """``X^T X`` with only the lower triangle filled (the upper one is zero)."""
    return dsyrk(1.0, np.asfortranarray(X), trans=1, lower=1)


# ---------------------------------------------------------------------------
# clarabel


def _solve_clarabel(prob: SdpProblem, tol=1e-9, max_iter=200, verbose=False, accept_tol=1e-7, **extra):
    import clarabel

    lay = _Layout(prob)
    n = prob.nvar
    rows = []
    rhs = []
    cones = []
    A_np = np.asarray(prob.A, float).reshape(-1, n)
    if A_np.shape[0]:
        rows.append(sp.csr_matrix(A_np))
        rhs.append(np.asarray(prob.b, float))
        cones.append(clarabel.ZeroConeT(A_np.shape[0]))
    if lay.nl:
        rows.append(lay.Gl)
        rhs.append(np.asarray(prob.hl, float))
        cones.append(clarabel.NonnegativeConeT(lay.nl))
    for b, k in enumerate(lay.sizes):
        # clarabel: upper triangle, column-major, off-diagonals scaled by sqrt 2
        iu, ju = np.triu_indices(k)
        order = np.lexsort((iu, ju))
        iu, ju = iu[order], ju[order]
        sc = np.where(iu == ju, 1.0, np.sqrt(2.0))
        Gb = np.zeros((len(iu), n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            Gb[:, j] = lay.G_block(b, e)[iu, ju] * sc
        hb = lay.h[lay.block_slice(b)].reshape(k, k, order="F")
        rows.append(sp.csr_matrix(Gb))
        rhs.append(hb[iu, ju] * sc)
        cones.append(clarabel.PSDTriangleConeT(k))
    Abig = sp.vstack(rows).tocsc()
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_iter = max_iter
    # Ruiz equilibration breaks down on the rank-deficient realified blocks
    settings.equilibrate_enable = False
    for key, val in extra.items():
        setattr(settings, key, val)
    P = sp.csc_matrix((n, n))
    solver = clarabel.DefaultSolver(P, -np.asarray(prob.c, float), Abig, np.concatenate(rhs), cones, settings)
    sol = solver.solve()
    st = str(sol.status)
    info = {"backend": "clarabel", "raw_status": st, "iterations": sol.iterations}
    if st.endswith("Solved") and not st.startswith("Almost"):
        status = "optimal"
    elif "PrimalInfeasible" in st:
        status = "infeasible"
    elif "DualInfeasible" in st:
        status = "unbounded"
    else:
        status = "numerical_failure"
    if status in ("infeasible", "unbounded"):
        return SdpIterate(np.full(n, np.nan), status, float("nan"), {}, info)
    return _finish(prob, np.array(sol.x), status, info, accept_tol)
