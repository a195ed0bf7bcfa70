import dataclasses

import numpy as np
import pytest

from topogap.bloch import BandSolution, assemble, eigensolve, grid_solutions, solve_at
from topogap.errors import QuantizationFailure, SingularOverlap, SingularSystem
from topogap.lattice import Lattice, k_grid
from topogap.medium import Disk, PermittivityField, rasterize
from topogap.topo import (AdjointSolver, chern, curvature_field, curvature_sensitivity, loop_phase,
                          plaquette_corners, plaquette_curvature, solve_adjoint, valley_chern,
                          valley_integrals, wilson_loop)


def rephase(sol, rng):
    ph = np.exp(2j * np.pi * rng.random(sol.eigenvectors.shape[1]))
    return dataclasses.replace(sol, eigenvectors=sol.eigenvectors * ph)


@pytest.fixture(scope="module")
def corners():
    return plaquette_corners((-1.2, 1.2), k_grid(Lattice.square(), 12))


def test_uniform_band_has_no_curvature():
    f = PermittivityField.uniform(Lattice.square(), 12, 1.0, 1.0, 11.7)
    c = plaquette_corners((0.9, -0.4), k_grid(f.lattice, 12))
    assert abs(plaquette_curvature(f, 1, c)) < 1e-10


def test_corners_counter_clockwise(corners):
    x, y = corners[:, 0], corners[:, 1]
    assert 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) > 0


@pytest.mark.parametrize("bands", [1, 3, [1, 2, 3]])
def test_plaquette_gauge_invariance(pair16, corners, bands, rng):
    f = pair16[0]
    sols = [eigensolve(assemble(f, k), 4) for k in corners]
    F = plaquette_curvature(f, bands, corners, sols)
    F2 = plaquette_curvature(f, bands, corners, [rephase(s, rng) for s in sols])
    assert abs(F - F2) < 1e-12 * max(1.0, abs(F))


def test_conjugation_flips_sign(pair16, corners):
    f = pair16[0]
    sols = [eigensolve(assemble(f, k), 4) for k in corners]
    conj = [dataclasses.replace(s, eigenvectors=s.eigenvectors.conj()) for s in sols]
    assert plaquette_curvature(f, range(1, 4), corners, conj) == pytest.approx(
        -plaquette_curvature(f, range(1, 4), corners, sols), abs=1e-12)


def test_det_and_sum_forms_agree_for_isolated_bands(pair16, corners):
    f = pair16[1]
    a = plaquette_curvature(f, range(1, 4), corners, form="det")
    b = plaquette_curvature(f, range(1, 4), corners, form="sum")
    # the two forms differ at O(plaquette area); both see the same valley sign
    assert np.sign(a) == np.sign(b) and abs(a - b) < 0.2 * abs(a)


def test_singular_overlap_detected():
    v = np.eye(4, 1, dtype=complex)
    w = np.eye(4, 1, k=-1, dtype=complex)
    with pytest.raises(SingularOverlap):
        loop_phase([v, w, v, v], np.ones(4))


def test_chern_zero_for_real_media(pair16):
    g = k_grid(Lattice.square(), 8)
    for f in pair16:
        c, res = chern(f, range(1, 4), g)
        assert c == 0 and res < 1e-6


def test_chern_quantization_failure():
    cf = curvature_field(PermittivityField.uniform(Lattice.square(), 8, 1.0, 1.0, 11.7), 1, k_grid(Lattice.square(), 4))
    cf = dataclasses.replace(cf, phases=cf.phases + 0.3 * 2 * np.pi / 16)
    with pytest.raises(QuantizationFailure):
        chern(None, 1, cf.kgrid, curvature=cf)


def test_curvature_phases_principal_branch(pair16):
    cf = curvature_field(pair16[0], range(1, 4), k_grid(Lattice.square(), 8))
    assert np.all(cf.phases > -np.pi) and np.all(cf.phases <= np.pi)


def test_valley_chern_antisymmetric(pair16):
    g = k_grid(Lattice.square(), 12)
    cf = curvature_field(pair16[0], range(1, 4), g)
    k1, k2 = (-1.2, 1.2), (1.2, -1.2)
    a = valley_chern(pair16[0], 3, k1, k2, kgrid=g, curvature=cf)
    b = valley_chern(pair16[0], 3, k2, k1, kgrid=g, curvature=cf)
    assert a == -b != 0


def test_valley_chern_zero_for_inversion_symmetric():
    lat = Lattice.square()
    f = rasterize(lat, 16, 1.0, [Disk((0.5, 0.5), 0.4, 11.7)], 1.0, 11.7)
    g = k_grid(lat, 8)
    cf = curvature_field(f, 1, g)
    c1, c2 = valley_integrals(cf, (-1.2, 1.2), (1.2, -1.2))
    assert abs(c1 - c2) < 1e-8
    assert valley_chern(f, 1, (-1.2, 1.2), (1.2, -1.2), kgrid=g, curvature=cf) == 0


def test_valley_points_must_differ(pair16):
    with pytest.raises(ValueError):
        valley_chern(pair16[0], 3, (1, 1), (1, 1), kgrid=k_grid(Lattice.square(), 8))


def test_wilson_trivial_band_is_zero():
    # band 1 of an inversion-symmetric crystal is centered on the inversion point
    f = rasterize(Lattice.square(), 16, 1.0, [Disk((0.5, 0.5), 0.5, 4.0)], 1.0, 11.7)
    ws = wilson_loop(f, 1, [0.0, 0.7, -2.0], 16)
    assert np.abs(ws.phases).max() < 1e-8


def test_wilson_origin_shift(pair16):
    # moving the origin by half a period along e2 shifts every phase by pi
    a = wilson_loop(pair16[0], 1, 0.3, 12).phases[0, 0]
    b = wilson_loop(pair16[0], 1, 0.3, 12, origin=(0.5, 0.0)).phases[0, 0]
    assert abs(np.angle(np.exp(1j * (a - b - np.pi)))) < 1e-10


def test_wilson_gauge_invariance(pair16, rng):
    f = pair16[0]
    lat = f.lattice
    b1hat = lat.b1 / np.linalg.norm(lat.b1)
    N = 12
    sols = [eigensolve(assemble(f, 0.4 * b1hat + j / N * lat.b2), 4) for j in range(N)]
    a = wilson_loop(f, [1, 2, 3], 0.4, N, [sols])
    b = wilson_loop(f, [1, 2, 3], 0.4, N, [[rephase(s, rng) for s in sols]])
    assert np.allclose(a.phases, b.phases, atol=1e-12)
    assert a.phases.shape == (1, 3) and np.all(np.diff(a.phases[0]) >= 0)


def test_wilson_needs_enough_points(pair16):
    with pytest.raises(ValueError):
        wilson_loop(pair16[0], 1, 0.0, 6)


@pytest.fixture(scope="module")
def eigpair(pair16):
    op = assemble(pair16[0], (0.4, -0.9))
    sol = eigensolve(op, 3)
    return op, sol.eigenvalues[1], sol.eigenvectors[:, 1]


def inner(op, a, b):
    return np.vdot(a, op.mdiag * b)


def test_adjoint_rhs_phi(eigpair):
    op, lam, phi = eigpair
    u = solve_adjoint(op, np.sqrt(lam), phi, phi)
    assert np.allclose(u, phi / (2 * lam), atol=1e-10 * np.abs(phi).max())


def test_adjoint_orthogonal_rhs(eigpair, rng):
    op, lam, phi = eigpair
    r = rng.standard_normal(op.size) + 1j * rng.standard_normal(op.size)
    r = r - inner(op, phi, r) * phi
    u = solve_adjoint(op, np.sqrt(lam), phi, r)
    assert abs(inner(op, phi, u)) < 1e-10 * np.linalg.norm(u)


def test_adjoint_substitution_identity(eigpair, rng):
    op, lam, phi = eigpair
    r = rng.standard_normal(op.size) + 1j * rng.standard_normal(op.size)
    u = solve_adjoint(op, np.sqrt(lam), phi, r)
    lhs = lam * op.mdiag * u - op.K @ u
    rhs = op.mdiag * (r - inner(op, phi, r) * phi)
    assert np.linalg.norm(lhs - rhs) < 1e-8 * np.linalg.norm(rhs)
    t = 2 * lam
    assert abs(t * inner(op, phi, u) - inner(op, phi, r)) < 1e-8 * abs(inner(op, phi, r))


def test_adjoint_rejects_zero_eigenvalue():
    f = PermittivityField.uniform(Lattice.square(), 8, 1.0, 1.0, 11.7)
    op = assemble(f, (0.0, 0.0))
    with pytest.raises(SingularSystem):
        AdjointSolver(op, 0.0, np.ones(64) / np.sqrt(op.mdiag.sum()))


def test_sensitivity_zero_step(pair16, corners):
    sf = curvature_sensitivity(pair16[0], range(1, 4), corners)
    assert sf.directional(np.zeros((16, 16))) == 0.0
    assert np.isrealobj(sf.g)


@pytest.mark.parametrize("form", ["sum", "det"])
def test_sensitivity_gauge_robust(pair16, corners, rng, form):
    f = pair16[1]
    sols = [eigensolve(assemble(f, k), 4) for k in corners]
    a = curvature_sensitivity(f, range(1, 4), corners, sols, form=form)
    b = curvature_sensitivity(f, range(1, 4), corners, [rephase(s, rng) for s in sols], form=form)
    assert np.abs(a.g - b.g).max() < 1e-8


@pytest.mark.parametrize("form", ["sum", "det"])
def test_sensitivity_matches_central_difference(pair16, corners, rng, form):
    f = pair16[0]
    sf = curvature_sensitivity(f, range(1, 4), corners, form=form)
    d = rng.standard_normal((16, 16))
    d *= 1e-5 / np.abs(d).max()
    Fp = plaquette_curvature(f.with_values(f.values + d), range(1, 4), corners, form=form)
    Fm = plaquette_curvature(f.with_values(f.values - d), range(1, 4), corners, form=form)
    fd = (Fp - Fm) / 2
    pred = sf.directional(d)
    assert abs(fd - pred) <= 1e-3 * abs(pred) + 1e-12
