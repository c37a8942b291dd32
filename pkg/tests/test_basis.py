import numpy as np
import pytest
import sympy
from hypothesis import given, strategies as st

from movns import basis as B
from movns.errors import DegenerateBasis
from movns.geometry import dilation_map, identity_map, metric_at
from movns.quadrature import gauss_legendre_square


def test_mode_ordering():
    assert B.mode_indices(6) == [(1, 1), (1, 2), (2, 1), (1, 3), (2, 2), (3, 1)]
    with pytest.raises(ValueError):
        B.mode_indices(0)


@pytest.mark.parametrize("dmap, s, expected", [
    (identity_map(), 0.3, 3 * np.pi ** 2 / 8),
    # J = 4 and h_down = 4 I at s = 1
    (dilation_map(), 1.0, 6 * np.pi ** 2),
])
def test_first_raw_norm_closed_form(dmap, s, expected, quad24):
    table = B.raw_table(1, quad24)
    G = B.gram_matrix(table, metric_at(dmap, quad24.nodes, s))
    assert abs(G[0, 0] - expected) < 1e-12 * expected


@pytest.mark.parametrize("family", B.FAMILIES)
@pytest.mark.parametrize("p", [1, 2, 5])
def test_profiles_match_symbolic_derivatives(family, p):
    z = sympy.Symbol("z")
    if family == "sin2":
        expr = sympy.sin(p * sympy.pi * z) ** 2
    else:
        expr = sympy.sin(sympy.pi * z) * sympy.sin(p * sympy.pi * z)
    pts = np.linspace(0, 1, 11)
    got = B._factors(p, pts, family)
    for k in range(4):
        f = sympy.lambdify(z, sympy.diff(expr, z, k), "numpy")
        np.testing.assert_allclose(got[k], np.broadcast_to(f(pts), pts.shape),
                                   atol=1e-10 * (p + 1) ** 3 * np.pi ** 3)


@pytest.mark.parametrize("family", B.FAMILIES)
def test_raw_elements_are_solenoidal_and_vanish_on_boundary(family):
    y = np.random.default_rng(0).random((40, 2))
    for e in B.raw_stream_basis(6, family):
        G = e.grad(y)
        assert np.max(np.abs(G[:, 0, 0] + G[:, 1, 1])) < 1e-12
        edge = np.array([[0.0, 0.3], [1.0, 0.6], [0.2, 0.0], [0.7, 1.0]])
        assert np.max(np.abs(e.field(edge))) < 1e-12


def test_unknown_family():
    with pytest.raises(ValueError):
        B.raw_stream_basis(2, "cheb")


@pytest.mark.parametrize("family", B.FAMILIES)
def test_series_orthonormal_and_lower_triangular(family, quad24):
    series = B.build_basis_series(dilation_map(), 8, B.TimeGrid(1.0, 10), quad24,
                                  family=family)
    assert series.gram_deviation() <= 1e-12
    assert np.all(np.triu(series.R, 1) == 0)
    assert np.all(np.diagonal(series.R, axis1=1, axis2=2) > 0)


def test_truncation_is_nested(quad24):
    series = B.build_basis_series(dilation_map(), 8, B.TimeGrid(1.0, 4), quad24)
    small = B.build_basis_series(dilation_map(), 4, B.TimeGrid(1.0, 4), quad24)
    np.testing.assert_allclose(series.truncate(4).R, small.R, atol=1e-13)
    with pytest.raises(ValueError):
        small.truncate(5)


def test_snapshot_evaluate_matches_table(quad24):
    snap = B.orthonormalize(B.raw_stream_basis(5), dilation_map(), 0.5, quad24)
    np.testing.assert_allclose(snap.evaluate(quad24.nodes[:7]), snap.values[:, :7],
                               atol=1e-13)


def test_time_derivative_is_second_order():
    t = np.linspace(0, 1, 21)
    R = np.sin(3 * t)[:, None, None] * np.ones((1, 2, 2))
    err = np.max(np.abs(B.basis_time_derivative(R, t[1])[:, 0, 0] - 3 * np.cos(3 * t)))
    t2 = np.linspace(0, 1, 41)
    R2 = np.sin(3 * t2)[:, None, None] * np.ones((1, 2, 2))
    err2 = np.max(np.abs(B.basis_time_derivative(R2, t2[1])[:, 0, 0] - 3 * np.cos(3 * t2)))
    assert 3.5 < err / err2 < 4.5
    with pytest.raises(ValueError):
        B.basis_time_derivative(R[:2], 0.1)


def test_degenerate_gram_raises():
    G = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]])
    with pytest.raises(DegenerateBasis):
        B.gram_schmidt(G)


@given(st.integers(2, 9), st.integers(0, 10 ** 6))
def test_gram_schmidt_random_spd(m, seed):
    A = np.random.default_rng(seed).standard_normal((m, m)) + 3 * np.eye(m)
    G = A @ A.T
    R = B.gram_schmidt(G)
    np.testing.assert_allclose(R @ G @ R.T, np.eye(m), atol=1e-10)


def test_time_grid():
    g = B.TimeGrid(0.5, 10)
    assert g.dt == 0.05 and len(g.nodes) == 11 and g.refine(2).N == 20
    with pytest.raises(ValueError):
        B.TimeGrid(1.0, 1)
    with pytest.raises(ValueError):
        B.TimeGrid(0.0, 4)


@pytest.mark.parametrize("family", B.FAMILIES)
def test_cache_round_trip(tmp_path, family, quad24):
    series = B.build_basis_series(dilation_map(), 4, B.TimeGrid(1.0, 6), quad24,
                                  family=family)
    path = tmp_path / "basis.bin"
    B.save_series(path, series)
    back = B.load_series(path)
    assert back.table.family == family and back.grid == series.grid
    np.testing.assert_array_equal(back.R, series.R)
    np.testing.assert_array_equal(back.Rdot, series.Rdot)
    with pytest.raises(ValueError, match="quadrature order"):
        B.load_series(path, gauss_legendre_square(10))
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage!" + path.read_bytes()[8:])
    with pytest.raises(ValueError, match="not a basis cache"):
        B.load_series(bad)


def test_antisymmetry_vanishes_on_fixed_domain(quad24):
    series = B.build_basis_series(identity_map(), 4, B.TimeGrid(1.0, 4), quad24)
    assert np.max(np.abs(B.antisymmetry_residual(series.snapshot(2), identity_map()))) < 1e-12
