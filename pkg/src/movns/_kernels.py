"""Hot loops with a numba implementation and a pure-numpy twin.

The backend is picked by the ``MOVNS_BACKEND`` environment variable
(``numba`` or ``numpy``; default ``numba`` when numba imports).  Under numba
the batched contractions still fall back to numpy above ``NUMBA_MAX_M``
modes, where BLAS is faster.  Both twins compute the same quantity; results
agree to round-off, not bitwise.
"""
from __future__ import annotations

import os
import warnings

import numpy as np

try:
    import numba
    from numba import njit, prange
    # prefer OpenMP; the TBB layer shipped with some images is too old
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f

    prange = range

OK, NONFINITE, BLOWUP = 0, 1, 2

# Above this many modes the batched contractions are dense enough for BLAS
# (through the numpy twin) to beat the scalar numba loops on one core; see
# benchmarks/bench_kernels.py.  MGS stays on numba at every size.
NUMBA_MAX_M = 12

# reassociation lets LLVM vectorise the reductions; no-NaN/no-Inf flags stay
# off because the blow-up guard relies on isfinite
_FAST = {"reassoc", "contract"}

_backend = None


def get_backend() -> str:
    global _backend
    if _backend is None:
        want = os.environ.get("MOVNS_BACKEND", "numba").strip().lower()
        if want not in ("numba", "numpy"):
            raise ValueError(f"MOVNS_BACKEND must be 'numba' or 'numpy', got {want!r}")
        if want == "numba" and not HAVE_NUMBA:
            warnings.warn("numba is not importable, using the numpy backend")
            want = "numpy"
        _backend = want
    return _backend


def set_backend(name: str) -> None:
    """Switch backend at run time (tests and the benchmark use this)."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


# ---------------------------------------------------------------------------
# Euler-Maruyama over a batch of paths

def em_integrate_numpy(g0, a_lin, a_tri, f, sig, dW, dt, threshold):
    """Explicit Euler-Maruyama for ``dg = (-A g - T(g, g) + f) dt + sig dW``.

    Parameters
    ----------
    g0 : (P, m) initial coefficients, one row per path
    a_lin, a_tri, f, sig : tensors at the left end of each step, leading axis N
    dW : (P, N) Brownian increments
    threshold : (P,) blow-up level for ``|g|^2``

    Returns
    -------
    g : (P, N + 1, m)
    fail_node : (P,) first node whose state is bad, ``-1`` if none
    fail_kind : (P,) ``OK``, ``NONFINITE`` or ``BLOWUP``
    """
    P, m = g0.shape
    N = dW.shape[1]
    g = np.empty((P, N + 1, m))
    g[:, 0] = g0
    fail_node = np.full(P, -1, dtype=np.int64)
    fail_kind = np.zeros(P, dtype=np.int64)
    cur = g0.copy()
    with np.errstate(all="ignore"):
        for n in range(N):
            T = a_tri[n].reshape(m * m, m) @ cur.T          # (m*m, P): sum over l
            tri = np.einsum("jkp,pk->pj", T.reshape(m, m, P), cur)
            cur = cur + (-(cur @ a_lin[n].T) - tri + f[n]) * dt + np.outer(dW[:, n], sig[n])
            g[:, n + 1] = cur
            e = np.einsum("pj,pj->p", cur, cur)
            fresh = fail_node < 0
            bad = fresh & ~np.isfinite(e)
            big = fresh & np.isfinite(e) & (e > threshold)
            fail_node[bad | big] = n + 1
            fail_kind[bad] = NONFINITE
            fail_kind[big] = BLOWUP
    for p in np.nonzero(fail_node >= 0)[0]:
        g[p, fail_node[p] + 1:] = np.nan
    return g, fail_node, fail_kind


@njit(cache=True, parallel=True, fastmath=_FAST)
def _em_integrate_numba(g0, a_lin, a_tri, f, sig, dW, dt, threshold):
    # time is the outer loop so the step tensors stay in cache while every
    # path advances; paths are independent and run in parallel
    P, m = g0.shape
    N = dW.shape[1]
    g = np.full((P, N + 1, m), np.nan)
    fail_node = np.full(P, -1, dtype=np.int64)
    fail_kind = np.zeros(P, dtype=np.int64)
    for p in range(P):
        for j in range(m):
            g[p, 0, j] = g0[p, j]
    for n in range(N):
        for p in prange(P):
            if fail_node[p] >= 0:
                continue
            e = 0.0
            for j in range(m):
                acc = f[n, j]
                for k in range(m):
                    gk = g[p, n, k]
                    acc -= a_lin[n, j, k] * gk
                    t = 0.0
                    for l in range(m):
                        t += a_tri[n, j, k, l] * g[p, n, l]
                    acc -= t * gk
                v = g[p, n, j] + acc * dt + sig[n, j] * dW[p, n]
                g[p, n + 1, j] = v
                e += v * v
            if not np.isfinite(e):
                fail_node[p] = n + 1
                fail_kind[p] = 1
            elif e > threshold[p]:
                fail_node[p] = n + 1
                fail_kind[p] = 2
    for p in range(P):
        if fail_node[p] >= 0:
            for n in range(fail_node[p] + 1, N + 1):
                for j in range(m):
                    g[p, n, j] = np.nan
    return g, fail_node, fail_kind


def em_integrate(g0, a_lin, a_tri, f, sig, dW, dt, threshold):
    args = (np.ascontiguousarray(g0, dtype=float), np.ascontiguousarray(a_lin),
            np.ascontiguousarray(a_tri), np.ascontiguousarray(f),
            np.ascontiguousarray(sig), np.ascontiguousarray(dW, dtype=float),
            float(dt), np.ascontiguousarray(threshold, dtype=float))
    if get_backend() == "numba" and args[0].shape[1] <= NUMBA_MAX_M:
        return _em_integrate_numba(*args)
    return em_integrate_numpy(*args)


# ---------------------------------------------------------------------------
# modified Gram-Schmidt in coefficient space

def mgs_numpy(G, reorth_tol):
    """Lower-triangular ``R`` with ``R G R^T = I`` by modified Gram-Schmidt.

    Row ``j`` of ``R`` holds the raw-basis coefficients of the ``j``-th
    orthonormal element.  A second sweep runs when the first leaves
    projections above ``reorth_tol`` (relative).  Returns
    ``(R, j_fail, nrm2)``; ``j_fail >= 0`` flags a non-positive pivot.
    """
    m = G.shape[0]
    R = np.zeros((m, m))
    for j in range(m):
        v = np.zeros(m)
        v[j] = 1.0
        for sweep in range(2):
            for i in range(j):
                v -= (R[i] @ (G @ v)) * R[i]
            if j == 0:
                break
            left = np.max(np.abs(R[:j] @ (G @ v)))
            if left <= reorth_tol * np.sqrt(max(v @ G @ v, 0.0)):
                break
        nrm2 = v @ G @ v
        if not nrm2 > 0.0:
            return R, j, nrm2
        R[j] = v / np.sqrt(nrm2)
    return R, -1, 0.0


@njit(cache=True)
def _mgs_numba(G, reorth_tol):
    m = G.shape[0]
    R = np.zeros((m, m))
    v = np.empty(m)
    Gv = np.empty(m)
    for j in range(m):
        for a in range(m):
            v[a] = 0.0
        v[j] = 1.0
        for sweep in range(2):
            worst = 0.0
            for i in range(j):
                # c = <w_i, v>_G
                for a in range(j + 1):
                    s = 0.0
                    for b in range(j + 1):
                        s += G[a, b] * v[b]
                    Gv[a] = s
                c = 0.0
                for a in range(i + 1):
                    c += R[i, a] * Gv[a]
                for a in range(i + 1):
                    v[a] -= c * R[i, a]
                if abs(c) > worst:
                    worst = abs(c)
            if sweep == 0 and j > 0:
                # measure what is left after one sweep
                for a in range(j + 1):
                    s = 0.0
                    for b in range(j + 1):
                        s += G[a, b] * v[b]
                    Gv[a] = s
                nv = 0.0
                for a in range(j + 1):
                    nv += v[a] * Gv[a]
                left = 0.0
                for i in range(j):
                    c = 0.0
                    for a in range(i + 1):
                        c += R[i, a] * Gv[a]
                    if abs(c) > left:
                        left = abs(c)
                if left <= reorth_tol * np.sqrt(max(nv, 0.0)):
                    break
            else:
                break
        nrm2 = 0.0
        for a in range(j + 1):
            s = 0.0
            for b in range(j + 1):
                s += G[a, b] * v[b]
            nrm2 += v[a] * s
        if not nrm2 > 0.0:
            return R, j, nrm2
        r = np.sqrt(nrm2)
        for a in range(j + 1):
            R[j, a] = v[a] / r
    return R, -1, 0.0


def mgs(G, reorth_tol=1e-12):
    G = np.ascontiguousarray(G, dtype=float)
    if get_backend() == "numba":
        return _mgs_numba(G, float(reorth_tol))
    return mgs_numpy(G, reorth_tol)


# ---------------------------------------------------------------------------
# trilinear quadrature contraction

def tri_contract_numpy(Wh, W, cov, chunk=512):
    """``T[j, k, l] = sum_q sum_{i,a} Wh[j,q,i] W[k,q,a] cov[l,q,i,a]``.

    ``Wh`` already carries the quadrature weight, ``J`` and the lowered
    index; ``cov[l, q, i, a]`` is the covariant derivative along ``a``.
    """
    m, nq, _ = W.shape
    out = np.zeros((m, m, m))
    for q0 in range(0, nq, chunk):
        q1 = min(nq, q0 + chunk)
        X = np.einsum("jqi,kqa->jkqia", Wh[:, q0:q1], W[:, q0:q1])
        out += (X.reshape(m * m, -1) @ cov[:, q0:q1].reshape(m, -1).T).reshape(m, m, m)
    return out


@njit(cache=True, parallel=True, fastmath=_FAST)
def _tri_contract_numba(Wh, W, cov):
    m, nq, _ = W.shape
    out = np.zeros((m, m, m))
    for j in prange(m):
        for k in range(m):
            for q in range(nq):
                b00 = Wh[j, q, 0] * W[k, q, 0]
                b01 = Wh[j, q, 0] * W[k, q, 1]
                b10 = Wh[j, q, 1] * W[k, q, 0]
                b11 = Wh[j, q, 1] * W[k, q, 1]
                for l in range(m):
                    out[j, k, l] += (b00 * cov[l, q, 0, 0] + b01 * cov[l, q, 0, 1]
                                     + b10 * cov[l, q, 1, 0] + b11 * cov[l, q, 1, 1])
    return out


def tri_contract(Wh, W, cov):
    args = tuple(np.ascontiguousarray(a, dtype=float) for a in (Wh, W, cov))
    if get_backend() == "numba" and args[1].shape[0] <= NUMBA_MAX_M:
        return _tri_contract_numba(*args)
    return tri_contract_numpy(*args)
