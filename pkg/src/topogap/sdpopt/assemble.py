"""Assembly of the linearized gap-maximization SDP from the current iterate.

Variables (all real), in order::

    a = alpha~, b = beta~, t = theta / theta_prev,
    x_1 (one per orbit of crystal 1), x_2 (crystal 2),   x_i = eps~_i / theta_prev

The rescaling by ``theta_prev`` keeps the permittivity variables at the size of
the permittivities themselves, which matters for the interior point method.  In
these units the current iterate is ``x_i = eps_i`` and ``t = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..lattice import orbit_count
from .problem import SdpProblem, lower_block, orbit_values, topo_rows, upper_block

A_IDX, B_IDX, T_IDX = 0, 1, 2


@dataclass
class CrystalState:
    """Everything the SDP needs about one crystal at the current iterate."""

    field: object                  # PermittivityField
    orbits: np.ndarray             # (n, n) orbit ids
    blocks: list                   # [(Projector, K)] over the constraint k-set
    sensitivities: list = field(default_factory=list)   # SensitivityField per valley
    F_current: list = field(default_factory=list)
    F_initial: list = field(default_factory=list)


def warm_start_scale(states):
    """``(theta, lam_l, lam_u)`` making the current fields feasible with
    ``alpha~ = theta/lam_l``, ``beta~ = theta/lam_u`` and ``alpha~ + beta~ = 2``."""
    lam_l = max(float(p.lam_lower[-1]) for st in states for p, _ in st.blocks)
    lam_u = min(float(p.lam_upper[0]) for st in states for p, _ in st.blocks)
    if not (lam_l > 0 and lam_u > 0):
        raise ValueError("warm start needs positive band edges")
    theta = 2.0 / (1.0 / lam_l + 1.0 / lam_u)
    return theta, lam_l, lam_u


def build_problem(states, rho, tau_p=None, theta_floor=1e-3, invariant="valley"):
    """Linearized SDP around the current fields; returns ``(problem, x0)`` where
    ``x0`` is the current iterate in problem variables."""
    theta0, lam_l, lam_u = warm_start_scale(states)
    nvar = 3
    slices = []
    for st in states:
        k = orbit_count(st.orbits)
        slices.append(slice(nvar, nvar + k))
        nvar += k
    x0 = np.zeros(nvar)
    x0[A_IDX] = theta0 / lam_l
    x0[B_IDX] = theta0 / lam_u
    x0[T_IDX] = 1.0
    lmis = []
    rows, rhs, labels = [], [], []

    def add_row(cols, vals, r, label):
        rows.append((np.asarray(cols), np.asarray(vals, float)))
        rhs.append(float(r))
        labels.append(label)

    for i, (st, sl) in enumerate(zip(states, slices), start=1):
        fld = st.field
        orb = st.orbits.ravel()
        x_prev = orbit_values(fld, st.orbits)
        x0[sl] = x_prev
        for j, (proj, K) in enumerate(st.blocks):
            tag = f"c{i}k{j}"
            lmis.append(lower_block(proj, K, orb, fld.cell_weight, A_IDX, sl, theta0, "lower/" + tag))
            lmis.append(upper_block(proj, K, orb, fld.cell_weight, B_IDX, sl, theta0, "upper/" + tag))
        span = fld.eps_hi - fld.eps_lo
        cols = np.arange(sl.start, sl.stop)
        for o, c in enumerate(cols):
            # eps_lo t <= x <= eps_hi t
            add_row([c, T_IDX], [-1.0, fld.eps_lo], 0.0, f"lo/c{i}o{o}")
            add_row([c, T_IDX], [1.0, -fld.eps_hi], 0.0, f"hi/c{i}o{o}")
            # |x - x_prev| <= rho (eps_hi - eps_lo)
            add_row([c], [1.0], x_prev[o] + rho * span, f"tr+/c{i}o{o}")
            add_row([c], [-1.0], -x_prev[o] + rho * span, f"tr-/c{i}o{o}")
        if invariant == "valley" and st.sensitivities:
            for row in topo_rows(st.sensitivities, st.F_current, st.F_initial, tau_p, 1.0, sl, orb,
                                 x_prev, label=f"topo/c{i}"):
                add_row(cols, row.coef, row.rhs, row.label)
    add_row([T_IDX], [-1.0], -theta_floor, "theta_floor")

    nl = len(rows)
    indptr = np.cumsum([0] + [len(c) for c, _ in rows])
    Gl = sp.csr_matrix((np.concatenate([v for _, v in rows]), np.concatenate([c for c, _ in rows]), indptr),
                       shape=(nl, nvar))
    A = np.zeros((1, nvar))
    A[0, A_IDX] = A[0, B_IDX] = 1.0
    c = np.zeros(nvar)
    c[A_IDX], c[B_IDX] = 1.0, -1.0
    names = {"alpha": A_IDX, "beta": B_IDX, "theta": T_IDX}
    for i, sl in enumerate(slices, start=1):
        names[f"eps{i}"] = sl
    meta = {"theta_prev": theta0, "lambda_l": lam_l, "lambda_u": lam_u, "rho": rho, "tau": tau_p}
    prob = SdpProblem(nvar, c, lmis, Gl, np.array(rhs), A, np.array([2.0]), names, slices, labels, meta)
    return prob, x0


def dedupe_time_reversal(lattice, points, tol=1e-9):
    """Drop wave vectors equivalent to an earlier one under ``k -> -k`` or a
    reciprocal lattice translation.  For real permittivity these carry the same
    spectrum and conjugate (hence equivalent) LMI blocks."""
    keep = []
    fr = []
    for k in np.atleast_2d(points):
        s = lattice.to_fractional_k(k)
        dup = False
        for t in fr:
            for sign in (1.0, -1.0):
                d = sign * s - t
                if np.all(np.abs(d - np.round(d)) < tol):
                    dup = True
                    break
            if dup:
                break
        if not dup:
            keep.append(np.asarray(k, float))
            fr.append(s)
    return np.array(keep)
