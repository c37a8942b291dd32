import numpy as np
import pytest

from movns import assembly as A
from movns.basis import FAMILIES, TimeGrid, build_basis_series
from movns.diagnostics import energy_neutrality, fixed_domain_oracle
from movns.geometry import dilation_map, identity_map, shear_map, wavy_shear_map
from movns.quadrature import gauss_legendre_square, recommended_order


def _series(dmap, m, family="sin2", N=4):
    quad = gauss_legendre_square(recommended_order(m))
    return build_basis_series(dmap, m, TimeGrid(1.0, N), quad, family=family)


@pytest.mark.parametrize("family", FAMILIES)
def test_identity_matches_fixed_domain_oracle(family):
    ts = A.assemble_series(identity_map(), _series(identity_map(), 4, family),
                           force_general=True)
    a_lin, a_tri = fixed_domain_oracle(4, family)
    assert np.max(np.abs(ts.a_lin - a_lin)) <= 1e-10
    assert np.max(np.abs(ts.a_tri - a_tri)) <= 1e-10
    # on a fixed domain the linear part is the symmetric stiffness
    np.testing.assert_allclose(ts.a_lin[0], ts.a_lin[0].T, atol=1e-10)
    np.testing.assert_allclose(ts.a_lin, ts.stiffness, atol=1e-10)


def test_sin2_convective_tensor_vanishes_and_sinprod_does_not():
    for fam, nonzero in (("sin2", False), ("sinprod", True)):
        ts = A.assemble_series(dilation_map(), _series(dilation_map(), 6, fam))
        assert (np.max(np.abs(ts.a_tri)) > 1e-2) == nonzero


@pytest.mark.parametrize("dmap", [identity_map(), dilation_map(), shear_map(),
                                  wavy_shear_map()], ids=lambda d: d.name)
def test_trilinear_skew_in_outer_slots(dmap):
    ts = A.assemble_series(dmap, _series(dmap, 5, "sinprod", N=2), force_general=True)
    np.testing.assert_allclose(ts.a_tri, -np.swapaxes(ts.a_tri, 1, 3), atol=1e-10)
    assert energy_neutrality(ts, 200) <= 1e-10


@pytest.mark.parametrize("family", FAMILIES)
def test_fast_path_matches_general(family):
    dmap = shear_map()
    series = _series(dmap, 5, family)
    f = A.make_data_field("mode", 0.7, 2, family)
    n = A.make_data_field("constant", 0.3)
    fast = A.assemble_series(dmap, series, f, n)
    gen = A.assemble_series(dmap, series, f, n, force_general=True)
    for name in ("a_lin", "a_tri", "f_vec", "sigma_vec", "stiffness"):
        np.testing.assert_allclose(getattr(fast, name), getattr(gen, name), atol=1e-10)


def test_tensor_truncation_is_exact():
    dmap = dilation_map()
    big = A.assemble_series(dmap, _series(dmap, 8, "sinprod"))
    small = A.assemble_series(dmap, _series(dmap, 4, "sinprod"))
    t = big.truncate(4)
    for name in ("a_lin", "a_tri", "stiffness"):
        np.testing.assert_allclose(getattr(t, name), getattr(small, name), atol=1e-9)
    assert not np.any(big.without_convection().a_tri)


def test_stiffness_is_positive_definite():
    ts = A.assemble_series(wavy_shear_map(), _series(wavy_shear_map(), 6))
    assert np.min(np.linalg.eigvalsh(ts.stiffness)) > 0


def test_data_fields():
    assert A.make_data_field("zero") is None
    assert A.make_data_field("mode", amplitude=0.0) is None
    c = A.make_data_field("constant", 2.0)
    np.testing.assert_array_equal(c(np.zeros((3, 2)), 0.0), [[2.0, 0.0]] * 3)
    with pytest.raises(ValueError):
        A.make_data_field("gaussian")


def test_noise_in_span_projects_onto_first_mode():
    # raw element 1 is a multiple of w_1, so only sigma_1 survives
    dmap = dilation_map()
    ts = A.assemble_series(dmap, _series(dmap, 4), noise=A.make_data_field("mode", 1.0, 1))
    assert np.max(np.abs(ts.sigma_vec[:, 1:])) < 1e-12
    assert np.all(ts.sigma_vec[:, 0] > 0)


def test_tensor_csv(tmp_path):
    ts = A.assemble_series(identity_map(), _series(identity_map(), 2, N=2))
    A.write_tensor_csv(tmp_path / "lin.csv", ts)
    A.write_tensor_csv(tmp_path / "tri.csv", ts, "a_tri")
    lines = (tmp_path / "lin.csv").read_text().splitlines()
    assert lines[0] == "s,j,k,value" and len(lines) == 1 + 3 * 4
    assert (tmp_path / "tri.csv").read_text().startswith("s,j,k,l,value")


def test_physical_quadrature_area():
    pq = A.physical_quadrature(dilation_map(), 1.0, gauss_legendre_square(8))
    assert abs(pq.weights.sum() - 4.0) < 1e-13
