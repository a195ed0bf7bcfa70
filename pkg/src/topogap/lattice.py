"""Direct/reciprocal lattice geometry, Brillouin-zone sampling and rotation orbits.

Conventions
-----------
* Lattice vectors ``e1, e2`` are the columns of ``E``; a point of the fundamental
  cell is ``x = E @ l`` with fractional coordinates ``l`` in ``[0, 1)^2``.
* Reciprocal vectors satisfy ``e_i . b_j = 2 pi delta_ij``.
* The Brillouin zone is represented by the primitive reciprocal parallelogram
  ``{s1 b1 + s2 b2 : s_i in [-1/2, 1/2)}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DegenerateLattice, UnsupportedKind

TWO_PI = 2.0 * np.pi


class LatticeKind(str, Enum):
    SQUARE = "square"
    HEXAGONAL = "hexagonal"
    GENERAL = "general"


def reciprocal(e1, e2):
    """Reciprocal basis ``(b1, b2)`` with ``e_i . b_j = 2 pi delta_ij``."""
    E = np.column_stack([np.asarray(e1, float), np.asarray(e2, float)])
    det = np.linalg.det(E)
    if abs(det) <= 1e-12:
        raise DegenerateLattice(f"lattice vectors are collinear (det={det:.3e})")
    B = TWO_PI * np.linalg.inv(E).T
    return B[:, 0].copy(), B[:, 1].copy()


@dataclass(frozen=True)
class Lattice:
    e1: np.ndarray
    e2: np.ndarray
    kind: LatticeKind = LatticeKind.GENERAL
    b1: np.ndarray = field(init=False, repr=False)
    b2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        e1 = np.asarray(self.e1, float).reshape(2)
        e2 = np.asarray(self.e2, float).reshape(2)
        b1, b2 = reciprocal(e1, e2)
        for name, v in (("e1", e1), ("e2", e2), ("b1", b1), ("b2", b2)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "kind", LatticeKind(self.kind))

    @classmethod
    def square(cls):
        return cls((1.0, 0.0), (0.0, 1.0), LatticeKind.SQUARE)

    @classmethod
    def hexagonal(cls):
        return cls((1.0, 0.0), (0.5, np.sqrt(3.0) / 2.0), LatticeKind.HEXAGONAL)

    @classmethod
    def from_kind(cls, kind):
        kind = LatticeKind(kind)
        if kind is LatticeKind.SQUARE:
            return cls.square()
        if kind is LatticeKind.HEXAGONAL:
            return cls.hexagonal()
        raise UnsupportedKind("general lattices need explicit vectors")

    @property
    def E(self):
        return np.column_stack([self.e1, self.e2])

    @property
    def B(self):
        return np.column_stack([self.b1, self.b2])

    @property
    def cell_area(self):
        return abs(np.linalg.det(self.E))

    @property
    def bz_area(self):
        return abs(np.linalg.det(self.B))

    @property
    def metric_inverse(self):
        """``E^{-1} E^{-T}``: the Laplacian in fractional coordinates is
        ``div_l (G grad_l)`` with this ``G``."""
        Ei = np.linalg.inv(self.E)
        return Ei @ Ei.T

    def to_cartesian_k(self, s):
        """Fractional reciprocal coordinates -> Cartesian wave vectors."""
        return np.asarray(s, float) @ self.B.T

    def to_fractional_k(self, k):
        return np.asarray(k, float) @ np.linalg.inv(self.B).T

    def cell_centers(self, n):
        """Cartesian cell-center positions, shape ``(n, n, 2)``; index ``[i1, i2]``."""
        l = (np.arange(n) + 0.5) / n
        L1, L2 = np.meshgrid(l, l, indexing="ij")
        return L1[..., None] * self.e1 + L2[..., None] * self.e2

    def periodic_k_distance(self, k, k0):
        """Distance from ``k`` (..., 2) to the nearest reciprocal-lattice image of ``k0``."""
        d = np.asarray(k, float) - np.asarray(k0, float)
        s = self.to_fractional_k(d)
        s = s - np.round(s)
        best = None
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                dd = self.to_cartesian_k(s + np.array([a, b]))
                r = np.linalg.norm(dd, axis=-1)
                best = r if best is None else np.minimum(best, r)
        return best

    def __eq__(self, other):
        if not isinstance(other, Lattice):
            return NotImplemented
        return (np.array_equal(self.e1, other.e1) and np.array_equal(self.e2, other.e2)
                and self.kind == other.kind)

    def __hash__(self):
        return hash((tuple(self.e1), tuple(self.e2), self.kind))


@dataclass(frozen=True)
class KGrid:
    """Uniform ``Nk x Nk`` sampling of the primitive reciprocal cell, centered so
    that Gamma is a grid point.  ``frac[i, j] = ((i - Nk//2)/Nk, (j - Nk//2)/Nk)``."""

    lattice: Lattice
    Nk: int

    @property
    def frac(self):
        s = (np.arange(self.Nk) - self.Nk // 2) / self.Nk
        S1, S2 = np.meshgrid(s, s, indexing="ij")
        return np.stack([S1, S2], axis=-1)

    @property
    def points(self):
        return self.lattice.to_cartesian_k(self.frac)

    @property
    def plaquette_area(self):
        return self.lattice.bz_area / self.Nk**2

    @property
    def spacing(self):
        """Grid steps along ``b1`` and ``b2`` as Cartesian vectors."""
        return self.lattice.b1 / self.Nk, self.lattice.b2 / self.Nk

    @property
    def plaquette_centers(self):
        return self.lattice.to_cartesian_k(self.frac + 0.5 / self.Nk)

    def point(self, i, j):
        """Grid point with unwrapped indices: ``point(i + Nk, j) == point(i, j) + b1``."""
        s = np.array([(i - self.Nk // 2) / self.Nk, (j - self.Nk // 2) / self.Nk])
        return self.lattice.to_cartesian_k(s)

    def wrap(self, i, j):
        """Wrap indices into range; returns ``(i0, j0, G)`` with ``point(i, j) = point(i0, j0) + G``."""
        i0, a = i % self.Nk, i // self.Nk
        j0, b = j % self.Nk, j // self.Nk
        return i0, j0, a * self.lattice.b1 + b * self.lattice.b2


@dataclass(frozen=True)
class KPath:
    labels: tuple
    vertices: np.ndarray
    samples: int

    @property
    def points(self):
        pts = []
        for a, b in zip(self.vertices[:-1], self.vertices[1:]):
            t = np.arange(self.samples) / self.samples
            pts.append(a + t[:, None] * (b - a))
        pts.append(self.vertices[-1][None, :])
        return np.concatenate(pts, axis=0)

    @property
    def distance(self):
        """Cumulative arc length along the path, for plotting."""
        p = self.points
        return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(p, axis=0), axis=1))])


def k_grid(lattice, Nk):
    if Nk < 4:
        raise ValueError("Nk must be >= 4")
    return KGrid(lattice, int(Nk))


def high_symmetry_path(lattice, samples):
    """Closed path Gamma-M-N-Gamma (square) or Gamma-M-K-Gamma (hexagonal)."""
    if samples < 2:
        raise ValueError("need at least 2 samples per segment")
    b1, b2 = lattice.b1, lattice.b2
    if lattice.kind is LatticeKind.SQUARE:
        labels = ("G", "M", "N", "G")
        verts = [np.zeros(2), b1 / 2, (b1 + b2) / 2, np.zeros(2)]
    elif lattice.kind is LatticeKind.HEXAGONAL:
        labels = ("G", "M", "K", "G")
        verts = [np.zeros(2), (b1 + b2) / 2, (2 * b1 + b2) / 3, np.zeros(2)]
    else:
        raise UnsupportedKind(f"no high-symmetry path for {lattice.kind.value} lattices")
    return KPath(labels, np.array(verts), int(samples))


# --------------------------------------------------------------------------
# rotation orbits on the discretized fundamental cell


_GROUP_ORDER = {"identity": 1, "C2": 2, "C3": 3, "C4": 4, "C6": 6}


def rotation_fractional(lattice, order):
    """Rotation by ``2 pi / order`` written in fractional coordinates (integer matrix)."""
    t = TWO_PI / order
    R = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    Rf = np.linalg.inv(lattice.E) @ R @ lattice.E
    Ri = np.round(Rf)
    if not np.allclose(Rf, Ri, atol=1e-9):
        raise UnsupportedKind(f"C{order} is not a symmetry of this lattice")
    return Ri.astype(int)


def _rotated_cell_index(n, Rf, center):
    l = (np.arange(n) + 0.5) / n
    L1, L2 = np.meshgrid(l, l, indexing="ij")
    pts = np.stack([L1, L2], axis=-1) - center
    img = pts @ Rf.T + center
    idx = np.round(img * n - 0.5).astype(int) % n
    return idx[..., 0] * n + idx[..., 1]


def symmetry_orbits(n, group, lattice):
    """Partition of the ``n x n`` cells into orbits of the rotation group about the
    cell centroid.  Returns an ``(n, n)`` int array of orbit ids ``0..n_orbits-1``
    numbered by first appearance in row-major order."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if group not in _GROUP_ORDER:
        raise ValueError(f"unknown symmetry group {group!r}")
    order = _GROUP_ORDER[group]
    parent = np.arange(n * n)

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    if order > 1:
        Rf = rotation_fractional(lattice, order)
        center = np.array([0.5, 0.5])
        Rk = np.eye(2, dtype=int)
        for _ in range(order - 1):
            Rk = Rf @ Rk
            img = _rotated_cell_index(n, Rk, center).ravel()
            for a, b in zip(range(n * n), img):
                ra, rb = find(a), find(int(b))
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(a) for a in range(n * n)])
    _, ids = np.unique(roots, return_inverse=True)
    # relabel by first appearance
    first = {}
    out = np.empty(n * n, dtype=int)
    for k, r in enumerate(ids):
        out[k] = first.setdefault(r, len(first))
    return out.reshape(n, n)


def orbit_count(orbits):
    return int(orbits.max()) + 1
