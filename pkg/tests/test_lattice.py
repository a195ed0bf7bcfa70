import numpy as np
import pytest
from hypothesis import given, strategies as st

from topogap.errors import DegenerateLattice, UnsupportedKind
from topogap.lattice import (Lattice, high_symmetry_path, k_grid, orbit_count, reciprocal,
                             rotation_fractional, symmetry_orbits, _rotated_cell_index)
from topogap.medium import PermittivityField, symmetrize


def test_reciprocal_square():
    b1, b2 = reciprocal((1, 0), (0, 1))
    assert np.allclose(b1, (2 * np.pi, 0)) and np.allclose(b2, (0, 2 * np.pi))


def test_reciprocal_hexagonal():
    b1, b2 = reciprocal((1, 0), (0.5, np.sqrt(3) / 2))
    assert np.allclose(b1, 2 * np.pi * np.array([1, -1 / np.sqrt(3)]), atol=1e-12)
    assert np.allclose(b2, 2 * np.pi * np.array([0, 2 / np.sqrt(3)]), atol=1e-12)


def test_collinear_vectors_rejected():
    with pytest.raises(DegenerateLattice):
        reciprocal((1, 0), (2, 0))


@given(st.floats(0.3, 3), st.floats(-2, 2), st.floats(-2, 2), st.floats(0.3, 3))
def test_biorthogonality(a, b, c, d):
    if abs(a * d - b * c) < 0.1:
        return
    lat = Lattice((a, b), (c, d))
    E = np.column_stack([lat.e1, lat.e2])
    B = np.column_stack([lat.b1, lat.b2])
    assert np.allclose(E.T @ B, 2 * np.pi * np.eye(2), atol=1e-12)


def test_k_grid_square_spacing():
    g = k_grid(Lattice.square(), 4)
    pts = g.points.reshape(-1, 2)
    assert len(pts) == 16
    assert np.allclose(g.spacing[0], (np.pi / 2, 0)) and np.allclose(g.spacing[1], (0, np.pi / 2))


@pytest.mark.parametrize("kind", ["square", "hexagonal"])
@pytest.mark.parametrize("Nk", [4, 5, 24])
def test_gamma_on_grid(kind, Nk):
    g = k_grid(Lattice.from_kind(kind), Nk)
    assert np.min(np.linalg.norm(g.points.reshape(-1, 2), axis=1)) < 1e-12


def test_hexagonal_plaquettes_tile_cell():
    lat = Lattice.hexagonal()
    g = k_grid(lat, 24)
    assert g.plaquette_area * 24**2 == pytest.approx(abs(np.linalg.det(np.column_stack([lat.b1, lat.b2]))))


def test_grid_periodicity():
    lat = Lattice.hexagonal()
    g = k_grid(lat, 6)
    assert np.allclose(g.point(2 + 6, 3), g.point(2, 3) + lat.b1)
    i0, j0, G = g.wrap(7, -1)
    assert np.allclose(g.point(7, -1), g.point(i0, j0) + G)


def test_small_grid_rejected():
    with pytest.raises(ValueError):
        k_grid(Lattice.square(), 3)


def test_square_path():
    p = high_symmetry_path(Lattice.square(), 2)
    assert len(p.points) == 7
    assert np.allclose(p.vertices, [[0, 0], [np.pi, 0], [np.pi, np.pi], [0, 0]])


def test_hexagonal_path_contains_K_on_zone_boundary():
    lat = Lattice.hexagonal()
    p = high_symmetry_path(lat, 4)
    K = np.array([4 * np.pi / 3, 0])
    assert np.min(np.linalg.norm(p.points - K, axis=1)) < 1e-12
    assert np.linalg.norm(K) == pytest.approx(np.linalg.norm(K - lat.b1))


def test_general_path_unsupported():
    with pytest.raises(UnsupportedKind):
        high_symmetry_path(Lattice((1, 0), (0.3, 1.1)), 4)


def test_identity_orbits():
    o = symmetry_orbits(6, "identity", Lattice.square())
    assert orbit_count(o) == 36 and len(np.unique(o)) == 36


def test_c4_orbit_sizes():
    o = symmetry_orbits(8, "C4", Lattice.square())
    sizes = np.bincount(o.ravel())
    assert set(sizes) <= {1, 2, 4}
    Rf = rotation_fractional(Lattice.square(), 4)
    img = _rotated_cell_index(8, Rf, np.array([0.5, 0.5])).ravel()
    assert np.array_equal(o.ravel()[img], o.ravel())


@pytest.mark.parametrize("group,order", [("C3", 3), ("C6", 6)])
def test_hexagonal_orbits_rotation_invariant(group, order, rng):
    lat = Lattice.hexagonal()
    n = 48
    o = symmetry_orbits(n, group, lat)
    f = symmetrize(PermittivityField(lat, n, 1 + 10 * rng.random((n, n))), o)
    Rf = rotation_fractional(lat, order)
    img = _rotated_cell_index(n, Rf, np.array([0.5, 0.5]))
    v = f.values.ravel()
    # nearest-cell rounding keeps the rotated image on the orbit, so the deviation is exactly zero
    assert np.max(np.abs(v[img.ravel()] - v)) < 1e-12


def test_c4_on_hexagonal_rejected():
    with pytest.raises(UnsupportedKind):
        rotation_fractional(Lattice.hexagonal(), 4)
