import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, strategies as st

from topogap.bloch import (DENSE_MAX_UNKNOWNS, assemble, band_structure, eigensolve, gap_measures, gap_report,
                           grid_solutions, solve_at)
from topogap.lattice import Lattice, high_symmetry_path, k_grid
from topogap.medium import PermittivityField


def uniform(n, eps=1.0, kind="square"):
    return PermittivityField.uniform(Lattice.from_kind(kind), n, eps, 1.0, 11.7)


def analytic_square(kappa, count):
    """Lowest ``|kappa + 2 pi (p, q)|^2`` of the continuum Laplacian on the unit square."""
    p = np.arange(-4, 5)
    P, Q = np.meshgrid(p, p)
    vals = (kappa[0] + 2 * np.pi * P) ** 2 + (kappa[1] + 2 * np.pi * Q) ** 2
    return np.sort(vals.ravel())[:count]


@pytest.mark.parametrize("kind", ["square", "hexagonal"])
def test_operator_hermitian_psd(kind, rng):
    f = PermittivityField(Lattice.from_kind(kind), 10, 1 + 10 * rng.random((10, 10)))
    op = assemble(f, (0.7, -1.3))
    K = op.K.toarray()
    assert np.linalg.norm(K - K.conj().T) <= 1e-12 * np.linalg.norm(K)
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * np.abs(K).max()
    assert np.all(op.mdiag > 0)


def test_constant_null_vector():
    op = assemble(uniform(12), (0.0, 0.0))
    assert np.abs(op.K @ np.ones(144)).max() < 1e-10


def test_time_reversal_of_stencil():
    f = uniform(8, kind="hexagonal")
    k = np.array([0.4, 1.1])
    assert abs(assemble(f, -k).K - assemble(f, k).K.conj()).max() < 1e-12


@pytest.mark.parametrize("kappa", [(0.0, 0.0), (1.0, 0.5), (np.pi, np.pi)])
def test_uniform_square_spectrum(kappa):
    kappa = np.array(kappa)
    sol = solve_at(uniform(64), kappa, 6)
    ref = analytic_square(kappa, 6)
    nz = ref > 1e-9
    assert np.allclose(sol.eigenvalues[nz], ref[nz], rtol=1e-2)
    assert np.all(np.abs(sol.eigenvalues[~nz]) < 1e-8)


def test_permittivity_scaling():
    lam1 = solve_at(uniform(32), (0.0, 0.0), 3).eigenvalues
    lam4 = solve_at(uniform(32, 4.0), (0.0, 0.0), 3).eigenvalues
    assert lam4[1] == pytest.approx(np.pi**2, rel=1e-2)
    assert np.allclose(lam4, lam1 / 4, rtol=1e-10, atol=1e-10)


@given(st.floats(0.2, 5.0))
def test_exact_inverse_scaling(s):
    rng = np.random.default_rng(5)
    lat = Lattice.square()
    v = 1 + 10 * rng.random((8, 8))
    a = solve_at(PermittivityField(lat, 8, v, 0.1, 100), (0.3, 0.2), 4).eigenvalues
    b = solve_at(PermittivityField(lat, 8, s * v, 0.1, 100), (0.3, 0.2), 4).eigenvalues
    assert np.allclose(b, a / s, rtol=1e-9, atol=1e-12)


def test_lowest_mode_constant():
    f = PermittivityField(Lattice.square(), 12, 1 + np.random.default_rng(2).random((12, 12)) * 10)
    sol = solve_at(f, (0.0, 0.0), 1)
    assert abs(sol.eigenvalues[0]) < 1e-9
    phi = sol.eigenvectors[:, 0]
    assert np.ptp(np.abs(phi)) < 1e-8


def test_sparse_path_orthonormal_residual(pair16):
    # n = 24 exceeds the dense threshold
    f = PermittivityField(Lattice.square(), 24, np.kron(pair16[0].values[::2, ::2], np.ones((3, 3))))
    assert f.n**2 > DENSE_MAX_UNKNOWNS
    op = assemble(f, (0.5, -0.7))
    sol = eigensolve(op, 5)
    P = sol.eigenvectors
    G = P.conj().T @ (op.mdiag[:, None] * P)
    assert np.abs(G - np.eye(5)).max() < 1e-8
    R = op.K @ P - (op.mdiag[:, None] * P) * sol.eigenvalues
    assert np.all(np.linalg.norm(R, axis=0) <= 1e-8 * np.linalg.norm(op.K @ P, axis=0))
    dense = np.sort(np.linalg.eigvalsh((np.diag(op.mdiag**-0.5) @ op.K.toarray() @ np.diag(op.mdiag**-0.5))))[:5]
    assert np.allclose(sol.eigenvalues, dense, rtol=1e-9)


def test_gauge_periodicity_in_kappa(pair16):
    f = pair16[0]
    k = np.array([0.3, -0.8])
    a = solve_at(f, k, 5).eigenvalues
    b = solve_at(f, k + f.lattice.b1, 5).eigenvalues
    assert np.allclose(a, b, rtol=1e-8)


def test_band_structure_singleton_and_order(pair16):
    f = pair16[0]
    pts = np.array([[0.1, 0.2], [1.0, -0.5], [2.0, 2.0]])
    one = band_structure(f, pts[:1], 3)
    assert len(one) == 1
    fwd = band_structure(f, pts, 3)
    rev = band_structure(f, pts[::-1], 3)
    for a, b in zip(fwd, rev[::-1]):
        assert np.allclose(a.eigenvalues, b.eigenvalues)


def test_band_structure_threads_match_serial(pair16):
    path = high_symmetry_path(Lattice.square(), 3)
    a = band_structure(pair16[0], path, 4)
    b = band_structure(pair16[0], path, 4, workers=3)
    assert all(np.allclose(x.eigenvalues, y.eigenvalues) for x, y in zip(a, b))


def test_time_reversal_halving_matches_full_grid(pair16):
    g = k_grid(Lattice.square(), 6)
    half = grid_solutions(pair16[1], g, 4)
    full = grid_solutions(pair16[1], g, 4, time_reversal=False)
    for a, b in zip(half.ravel(), full.ravel()):
        assert np.allclose(a.kappa, b.kappa)
        assert np.allclose(a.eigenvalues, b.eigenvalues, rtol=1e-9, atol=1e-9)
        # eigenvectors agree up to a phase (simple bands at generic points)
        ov = np.abs(np.sum(a.eigenvectors.conj() * b.eigenvectors * assemble(pair16[1], a.kappa).mdiag[:, None], axis=0))
        simple = np.min(np.abs(np.diff(a.eigenvalues))) > 1e-6
        if simple:
            assert np.allclose(ov, 1.0, atol=1e-8)


def test_gap_measures():
    assert gap_measures(2.0, 2.0) == (0.0, 0.0)
    J, G = gap_measures(1.0, 3.0)
    assert J == pytest.approx(1.0)
    assert G == pytest.approx(2 * (np.sqrt(3) - 1) / (np.sqrt(3) + 1))


@given(st.floats(0.1, 100), st.floats(0.1, 100))
def test_gap_measures_sign(lo, hi):
    J, G = gap_measures(lo, hi)
    assert np.sign(J) == np.sign(G) == np.sign(hi - lo)


def test_gap_report_picks_extremes(pair16):
    pts = high_symmetry_path(Lattice.square(), 3)
    b1 = band_structure(pair16[0], pts, 4)
    b2 = band_structure(pair16[1], pts, 4)
    r = gap_report(b1, b2, 3)
    lam3 = max(s.eigenvalues[2] for s in b1 + b2)
    lam4 = min(s.eigenvalues[3] for s in b1 + b2)
    assert r.lambda_l == lam3 and r.lambda_u == lam4
    with pytest.raises(ValueError):
        gap_report(b1, b2, 4)


def test_direct_gap_smallest_at_valley():
    # the 3-4 gap opens at a perturbed Dirac point near (-1.2, 1.2), off the high-symmetry path
    from conftest import square_pair

    f = square_pair(32)[0]
    bs = band_structure(f, high_symmetry_path(f.lattice, 8), 4)
    on_path = min(s.eigenvalues[3] - s.eigenvalues[2] for s in bs)
    v = solve_at(f, (-1.2, 1.2), 4).eigenvalues
    assert v[3] - v[2] < 0.5 * on_path
