"""Piecewise-constant permittivity fields on the discretized fundamental cell."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ShapeOutOfRange
from .lattice import Lattice, symmetry_orbits


@dataclass(frozen=True, eq=False)
class PermittivityField:
    """Cell-centered permittivity on an ``n x n`` grid of the fundamental cell.

    ``values[i1, i2]`` is the permittivity of the cell whose center sits at the
    fractional coordinates ``((i1 + 1/2)/n, (i2 + 1/2)/n)``.

    Construction does not enforce ``eps_lo <= values <= eps_hi`` so that
    inadmissible files can be loaded and reported; use :meth:`violations` or
    :func:`clamp`.
    """

    lattice: Lattice
    n: int
    values: np.ndarray
    eps_lo: float = 1.0
    eps_hi: float = 11.7
    symmetry: str = "identity"

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != (self.n, self.n):
            raise ValueError(f"values must have shape {(self.n, self.n)}, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "eps_lo", float(self.eps_lo))
        object.__setattr__(self, "eps_hi", float(self.eps_hi))

    @classmethod
    def uniform(cls, lattice, n, value, eps_lo=None, eps_hi=None, symmetry="identity"):
        eps_lo = value if eps_lo is None else eps_lo
        eps_hi = value if eps_hi is None else eps_hi
        return cls(lattice, n, np.full((n, n), float(value)), eps_lo, eps_hi, symmetry)

    def with_values(self, values):
        return replace(self, values=values)

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def cell_weight(self):
        """Quadrature weight of one grid cell (its physical area)."""
        return self.lattice.cell_area / self.n**2

    def violations(self, tol=0.0):
        out = []
        if not self.eps_lo > 0:
            out.append(f"eps_lo={self.eps_lo} must be positive")
        if self.eps_lo > self.eps_hi:
            out.append(f"eps_lo={self.eps_lo} exceeds eps_hi={self.eps_hi}")
        if not np.all(np.isfinite(self.values)):
            out.append("non-finite permittivity values")
            return out
        hi = np.argwhere(self.values > self.eps_hi + tol)
        lo = np.argwhere(self.values < self.eps_lo - tol)
        for name, idx, bound in (("above eps_hi", hi, self.eps_hi), ("below eps_lo", lo, self.eps_lo)):
            if len(idx):
                i, j = idx[0]
                out.append(f"{len(idx)} cell(s) {name}={bound}; first at ({i}, {j}) "
                           f"value {self.values[i, j]!r}")
        if self.symmetry != "identity":
            orbits = symmetry_orbits(self.n, self.symmetry, self.lattice)
            dev = np.max(np.abs(self.values - _orbit_mean(self.values, orbits)))
            if dev > max(tol, 1e-12 * max(1.0, self.eps_hi)):
                out.append(f"values not constant on {self.symmetry} orbits (max deviation {dev:.3e})")
        return out

    def is_admissible(self, tol=0.0):
        return not self.violations(tol)


# ---------------------------------------------------------------------------
# geometry primitives


@dataclass(frozen=True)
class Disk:
    center: tuple
    diameter: float
    fill: float

    def contains(self, x):
        c = np.asarray(self.center, float)
        return np.sum((x - c) ** 2, axis=-1) <= (0.5 * self.diameter) ** 2


@dataclass(frozen=True)
class Polygon:
    vertices: tuple
    fill: float

    def contains(self, x):
        # even-odd ray casting, vectorized over points
        v = np.asarray(self.vertices, float)
        px, py = x[..., 0], x[..., 1]
        inside = np.zeros(px.shape, dtype=bool)
        for (x0, y0), (x1, y1) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (y0 > py) != (y1 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (px < xc)
        return inside


@dataclass(frozen=True)
class RightTriangle:
    """Isosceles right triangle with the right angle at ``corner``.

    The legs have length ``short_edge`` and point along the angles
    ``orientation`` and ``orientation + 90`` degrees.
    """

    corner: tuple
    short_edge: float
    orientation: float
    fill: float

    @property
    def polygon(self):
        c = np.asarray(self.corner, float)
        t = np.deg2rad(self.orientation)
        u = self.short_edge * np.array([np.cos(t), np.sin(t)])
        w = self.short_edge * np.array([-np.sin(t), np.cos(t)])
        return Polygon((tuple(c), tuple(c + u), tuple(c + w)), self.fill)

    def contains(self, x):
        return self.polygon.contains(x)


ShapeSpec = Disk | Polygon | RightTriangle


def rasterize(lattice: Lattice, n: int, background: float, shapes: Sequence = (),
              eps_lo=None, eps_hi=None, symmetry="identity") -> PermittivityField:
    """Sample shapes at cell centers; later shapes overwrite earlier ones.

    Shapes are given in Cartesian coordinates and are tiled periodically, so a
    shape crossing the cell boundary reappears on the opposite side.
    """
    if n < 8:
        raise ValueError("n must be >= 8")
    eps_lo = min([background] + [s.fill for s in shapes]) if eps_lo is None else eps_lo
    eps_hi = max([background] + [s.fill for s in shapes]) if eps_hi is None else eps_hi
    for v in [background] + [s.fill for s in shapes]:
        if not (eps_lo <= v <= eps_hi):
            raise ShapeOutOfRange(f"fill {v} outside [{eps_lo}, {eps_hi}]")
    x = lattice.cell_centers(n)
    values = np.full((n, n), float(background))
    shifts = [a * lattice.e1 + b * lattice.e2 for a in (-1, 0, 1) for b in (-1, 0, 1)]
    for s in shapes:
        mask = np.zeros((n, n), dtype=bool)
        for d in shifts:
            mask |= s.contains(x + d)
        values[mask] = s.fill
    return PermittivityField(lattice, n, values, eps_lo, eps_hi, symmetry)


def _orbit_mean(values, orbits):
    ids = orbits.ravel()
    sums = np.bincount(ids, weights=values.ravel())
    counts = np.bincount(ids)
    # rounding in the sum can leave the mean an ulp outside the orbit's range
    lo = np.full(counts.size, np.inf)
    hi = np.full(counts.size, -np.inf)
    np.minimum.at(lo, ids, values.ravel())
    np.maximum.at(hi, ids, values.ravel())
    return np.clip(sums / counts, lo, hi)[ids].reshape(values.shape)


def symmetrize(field: PermittivityField, orbits) -> PermittivityField:
    orbits = np.asarray(orbits)
    if orbits.shape != field.values.shape:
        raise ValueError("orbit map does not match the field resolution")
    return field.with_values(_orbit_mean(field.values, orbits))


def clamp(field: PermittivityField) -> PermittivityField:
    return field.with_values(np.clip(field.values, field.eps_lo, field.eps_hi))


def rotate_nearest(values, lattice, order, k=1):
    """Image of a cell array under rotation by ``k * 2 pi / order`` about the cell
    centroid, using the same nearest-cell rule as the orbit map."""
    from .lattice import _rotated_cell_index, rotation_fractional

    n = values.shape[0]
    Rf = np.linalg.matrix_power(rotation_fractional(lattice, order), k)
    idx = _rotated_cell_index(n, Rf, np.array([0.5, 0.5]))
    out = np.empty(n * n)
    out[idx.ravel()] = values.ravel()
    return out.reshape(n, n)
