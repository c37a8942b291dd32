import os
import subprocess
import sys

import numpy as np
import pytest

from movns import _kernels as K


@pytest.fixture
def restore_backend():
    old = K.get_backend()
    yield
    K.set_backend(old)


def _em_args(m, P=5, N=40, seed=0, scale=0.05):
    rng = np.random.default_rng(seed)
    a_lin = np.eye(m) * 3.0 + scale * rng.standard_normal((N, m, m))
    a_tri = scale * rng.standard_normal((N, m, m, m))
    return (rng.standard_normal((P, m)), a_lin, a_tri, 0.1 * rng.standard_normal((N, m)),
            0.2 * rng.standard_normal((N, m)), 0.03 * rng.standard_normal((P, N)), 1e-3,
            np.full(P, 1e9))


@pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba missing")
@pytest.mark.parametrize("m", [1, 3, 12, 16])
def test_em_backends_agree(m, restore_backend, monkeypatch):
    monkeypatch.setattr(K, "NUMBA_MAX_M", 10 ** 9)
    args = _em_args(m)
    K.set_backend("numba")
    a = K.em_integrate(*args)
    K.set_backend("numpy")
    b = K.em_integrate(*args)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-13, atol=1e-13)
    np.testing.assert_array_equal(a[1], b[1])


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_em_flags_blowup_and_nonfinite(backend, restore_backend):
    if backend == "numba" and not K.HAVE_NUMBA:
        pytest.skip("numba missing")
    K.set_backend(backend)
    g0, a_lin, a_tri, f, sig, dW, dt, thr = _em_args(2, P=3)
    a_lin = -50.0 * np.tile(np.eye(2), (a_lin.shape[0], 1, 1))  # exponential growth
    thr = np.array([1e9, 10.0, 1e9])
    g, node, kind = K.em_integrate(g0, a_lin, 0 * a_tri, f, sig, dW, 0.05, thr)
    assert node[1] >= 0 and kind[1] == K.BLOWUP
    assert np.all(np.isnan(g[1, node[1] + 1:]))
    g0 = g0.copy()
    g0[2, 0] = np.inf
    g, node, kind = K.em_integrate(g0, a_lin, 0 * a_tri, f, sig, dW, dt, np.full(3, 1e9))
    assert kind[2] == K.NONFINITE


@pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba missing")
@pytest.mark.parametrize("m", [3, 10])
def test_mgs_backends_agree(m, restore_backend):
    A = np.random.default_rng(m).standard_normal((m, m)) + 2 * np.eye(m)
    G = A @ A.T
    K.set_backend("numba")
    a = K.mgs(G)
    K.set_backend("numpy")
    b = K.mgs(G)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12)
    np.testing.assert_allclose(a[0] @ G @ a[0].T, np.eye(m), atol=1e-12)


@pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba missing")
def test_tri_contract_backends_agree(restore_backend, monkeypatch):
    monkeypatch.setattr(K, "NUMBA_MAX_M", 10 ** 9)
    rng = np.random.default_rng(3)
    m, nq = 5, 37
    Wh, W, cov = rng.random((m, nq, 2)), rng.random((m, nq, 2)), rng.random((m, nq, 2, 2))
    K.set_backend("numba")
    a = K.tri_contract(Wh, W, cov)
    K.set_backend("numpy")
    b = K.tri_contract(Wh, W, cov)
    ref = np.einsum("jqi,kqp,lqip->jkl", Wh, W, cov)
    np.testing.assert_allclose(a, ref, atol=1e-12)
    np.testing.assert_allclose(b, ref, atol=1e-12)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        K.set_backend("cuda")


@pytest.mark.parametrize("flag, expect", [("numpy", "numpy"), ("NumPy ", "numpy")])
def test_environment_flag(flag, expect):
    code = "from movns import _kernels; print(_kernels.get_backend())"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={**os.environ, "MOVNS_BACKEND": flag}, check=True)
    assert out.stdout.strip() == expect


def test_bad_environment_flag():
    code = "from movns import _kernels; _kernels.get_backend()"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={**os.environ, "MOVNS_BACKEND": "fortran"})
    assert out.returncode != 0 and "MOVNS_BACKEND" in out.stderr
