import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from movns import geometry as geo
from movns.errors import (FrameMismatch, NonConstantJacobian, NonInvertibleJacobian,
                          OutOfDomain)

Y = np.array([0.3, 0.7])


def test_identity_metric():
    g = geo.metric_at(geo.identity_map(), Y, 0.5)
    for a in (g.M, g.K, g.h_up, g.h_down):
        np.testing.assert_array_equal(a, np.eye(2))
    assert g.J == 1.0
    assert np.all(g.Phi == 0) and np.all(g.dy_dt == 0)


def test_dilation_metric_closed_form():
    # x = (1 + t) y at s = 1: r = 2, r' = 1
    g = geo.metric_at(geo.dilation_map(), Y, 1.0)
    np.testing.assert_allclose(g.M, 0.5 * np.eye(2), atol=1e-15)
    np.testing.assert_allclose(g.J, 4.0, rtol=1e-14)
    np.testing.assert_allclose(g.h_up, 0.25 * np.eye(2), atol=1e-15)
    np.testing.assert_allclose(g.h_down, 4.0 * np.eye(2), atol=1e-14)
    np.testing.assert_allclose(g.dy_dt, [-0.15, -0.35], atol=1e-15)
    np.testing.assert_allclose(g.d2x_dsdy, np.eye(2), atol=1e-15)
    assert np.all(g.Phi == 0)


@pytest.mark.parametrize("s", [0.0, 0.4, 1.0])
def test_rotation_is_volume_and_metric_preserving(s):
    g = geo.metric_at(geo.rotation_map(), Y, s)
    assert abs(g.J - 1.0) < 1e-14
    np.testing.assert_allclose(g.h_up, np.eye(2), atol=1e-14)


def test_identities_on_builtin_maps(builtin_map):
    assert geo.inverse_identity_residual(builtin_map, 300) <= 1e-10
    assert geo.metric_identity_residual(builtin_map, 300) <= 1e-10
    assert geo.christoffel_residual(builtin_map, 100) <= 1e-8


def test_wavy_shear_has_curvature_terms():
    g = geo.metric_at(geo.wavy_shear_map(), Y, 0.8)
    assert np.max(np.abs(g.Phi)) > 1e-3
    np.testing.assert_allclose(g.Phi, np.swapaxes(g.Phi, -1, -2), atol=1e-15)


@given(a=st.floats(0.3, 3.0), b=st.floats(-0.25, 2.0), s=st.floats(0.0, 1.0),
       y1=st.floats(0.0, 1.0), y2=st.floats(0.0, 1.0))
def test_dilation_family_identities(a, b, s, y1, y2):
    dmap = geo.dilation_map(f"{a!r} + {b!r}*t")
    g = geo.metric_at(dmap, np.array([y1, y2]), s)
    r = a + b * s
    np.testing.assert_allclose(g.J, r * r, rtol=1e-12)
    np.testing.assert_allclose(g.h_up @ g.h_down, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(g.h_down), g.J ** 2, rtol=1e-12)
    # dy/dt along fixed x is -r'/r y
    np.testing.assert_allclose(g.dy_dt, -b / r * np.array([y1, y2]), atol=1e-12)


@given(theta=st.floats(-3.0, 3.0), s=st.floats(0.0, 1.0))
def test_rotation_family_inverse(theta, s):
    dmap = geo.rotation_map(f"{theta!r}*t")
    y = np.array([[0.1, 0.9], [0.5, 0.5]])
    np.testing.assert_allclose(dmap.forward(dmap.inverse(y, s), s), y, atol=1e-13)


def test_time_function_derivative():
    f, df = geo.time_function("sin(2*t) + t**2")
    assert abs(f(0.3) - (np.sin(0.6) + 0.09)) < 1e-15
    assert abs(df(0.3) - (2 * np.cos(0.6) + 0.6)) < 1e-15
    with pytest.raises(ValueError, match="only depend on t"):
        geo.time_function("x + t")


def test_dilation_rejects_nonpositive_factor():
    with pytest.raises(ValueError):
        geo.dilation_map("1 - 2*t")


def test_metric_errors():
    dmap = geo.dilation_map()
    with pytest.raises(OutOfDomain):
        geo.metric_at(dmap, np.array([1.5, 0.5]), 0.0)
    # det M = 1/4 at s = 1, below a floor of 1/2
    with pytest.raises(NonInvertibleJacobian):
        geo.metric_at(dataclasses.replace(dmap, det_floor=0.5), Y, 1.0)
    # y1 = x1 + x1^2 / 2 has det M = 1 + x1, which varies in space
    bent = geo.user_map_from_expressions(("x1 + x1**2/2", "x2"),
                                         ("sqrt(1 + 2*y1) - 1", "y2"))
    with pytest.raises(NonConstantJacobian):
        geo.metric_at(bent, np.array([[0.1, 0.5], [0.9, 0.5]]), 0.0)


def test_user_map_matches_closed_form():
    user = geo.user_map_from_expressions(("x1/(1+t)", "x2/(1+t)"),
                                         ("(1+t)*y1", "(1+t)*y2"))
    assert not user.exact
    a = geo.metric_at(user, Y, 0.6)
    b = geo.metric_at(geo.dilation_map(), Y, 0.6)
    np.testing.assert_allclose(a.M, b.M, atol=1e-9)
    np.testing.assert_allclose(a.dy_dt, b.dy_dt, atol=1e-9)
    np.testing.assert_allclose(a.d2x_dsdy, b.d2x_dsdy, atol=1e-7)
    assert np.max(np.abs(a.Phi)) < 1e-5


def test_user_map_warns():
    with pytest.warns(UserWarning, match="finite"):
        geo.user_map(lambda x, t: x, lambda y, s: y)


def test_push_pull_round_trip(builtin_map):
    f = geo.curl_sampler(lambda z, t: np.stack([np.cos(z[..., 0]), z[..., 1] ** 2], -1),
                         lambda z, t: np.zeros(z.shape[:-1] + (2, 2)), geo.REFERENCE)
    back = geo.push_forward(builtin_map, geo.pull_back(builtin_map, f))
    y = np.random.default_rng(1).random((50, 2))
    np.testing.assert_allclose(back(y, 0.7), f(y, 0.7), atol=1e-12)


def test_transport_gradients_match_finite_differences(builtin_map):
    psi_grad = lambda z, t: np.stack([np.cos(z[..., 0]) * z[..., 1],  # noqa: E731
                                      np.sin(z[..., 0]) + z[..., 1] ** 2], -1)

    def psi_hess(z, t):
        h11 = -np.sin(z[..., 0]) * z[..., 1]
        h12 = np.cos(z[..., 0])
        h22 = 2.0 * z[..., 1]
        return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)

    ref = geo.curl_sampler(psi_grad, psi_hess, geo.REFERENCE)
    phys = geo.pull_back(builtin_map, ref)
    t, h = 0.6, 1e-6
    x = builtin_map.inverse(np.array([[0.4, 0.3], [0.7, 0.6]]), t)
    E = np.eye(2)
    fd = np.stack([(phys(x + h * E[b], t) - phys(x - h * E[b], t)) / (2 * h)
                   for b in range(2)], axis=-1)
    np.testing.assert_allclose(phys.grad(x, t), fd, atol=1e-7)


def test_frame_mismatch():
    f = geo.VectorFieldSampler(lambda z, t: z, geo.PHYSICAL)
    with pytest.raises(FrameMismatch):
        geo.pull_back(geo.identity_map(), f)
    with pytest.raises(FrameMismatch):
        geo.divergence_residual(f, geo.REFERENCE, 0.0)


def test_divergence_of_nonsolenoidal_field():
    f = geo.VectorFieldSampler(lambda y, s: np.stack([y[..., 0], 0 * y[..., 1]], -1),
                               geo.REFERENCE)
    assert abs(geo.divergence_residual(f, geo.REFERENCE, 0.0) - 1.0) < 1e-10


def test_divergence_residual_is_second_order():
    f = geo.curl_sampler(
        lambda z, t: np.stack([-3 * np.sin(3 * z[..., 0]) * np.sin(2 * z[..., 1]),
                               2 * np.cos(3 * z[..., 0]) * np.cos(2 * z[..., 1])], -1),
        None, geo.REFERENCE)
    r = [geo.divergence_residual(f, geo.REFERENCE, 0.0, fd_step=h) for h in (1e-2, 5e-3)]
    assert 3.6 < r[0] / r[1] < 4.4
