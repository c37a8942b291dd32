"""Weighted inner products, transformed operators and Galerkin tensors.

For a basis ``w_1..w_m`` at time ``s`` the coefficient system reads

    dg_j + (sum_k a_jk g_k + sum_kl a_jkl g_k g_l) ds = f_j ds + sigma_j dW

with ``a_jk = <w_k', w_j> - <F w_k, w_j> + <G w_k, w_j>`` and
``a_jkl = <N(w_k, w_l), w_j>``, all inner products weighted by the metric.

Two assembly paths exist.  The general one samples the metric at every
quadrature node.  For affine maps the metric is constant in space and
``dy/dt`` is affine in ``y``, so every raw-basis integral reduces to a fixed
set of moments computed once; each time node then costs a few small
contractions with ``R(s)``.  Tests check that both paths agree.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .basis import BasisSeries, BasisSnapshot, RawTable, _field_parts
from .geometry import metric_at


# ---------------------------------------------------------------------------
# inner products on sampled fields

def _wJ(metric, quad):
    return quad.weights * np.broadcast_to(metric.J, quad.weights.shape)


def _h(a, nq):
    return np.broadcast_to(a, (nq,) + a.shape[-2:])


def weighted_inner(u, v, metric, quad):
    """``sum_q w_q J h_ij u^i v^j``.

    ``u`` and ``v`` are ``(nq, 2)`` (returns a float) or stacks ``(k, nq, 2)``
    (returns the ``(k_u, k_v)`` matrix).
    """
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    su, sv = u.ndim == 2, v.ndim == 2
    U, V = (u[None] if su else u), (v[None] if sv else v)
    hV = np.einsum("qij,bqj->bqi", _h(metric.h_down, quad.size), V)
    hV *= _wJ(metric, quad)[None, :, None]
    out = np.tensordot(U, hV, axes=([1, 2], [1, 2]))
    if su and sv:
        return float(out[0, 0])
    return out[0] if su else (out[:, 0] if sv else out)


def gradient_inner(du, dv, metric, quad):
    """``sum_q w_q J h_ij h^kl (nabla_k u^i)(nabla_l v^j)``.

    ``du[..., q, i, k] = nabla_k u^i``; shapes as in :func:`weighted_inner`.
    """
    du, dv = np.asarray(du, dtype=float), np.asarray(dv, dtype=float)
    su, sv = du.ndim == 3, dv.ndim == 3
    U, V = (du[None] if su else du), (dv[None] if sv else dv)
    nq = quad.size
    hV = np.einsum("qij,bqjl,qkl->bqik", _h(metric.h_down, nq), V, _h(metric.h_up, nq),
                   optimize=True)
    hV *= _wJ(metric, quad)[None, :, None, None]
    out = np.tensordot(U, hV, axes=([1, 2, 3], [1, 2, 3]))
    if su and sv:
        return float(out[0, 0])
    return out[0] if su else (out[:, 0] if sv else out)


# ---------------------------------------------------------------------------
# transformed operators

@dataclass(frozen=True)
class OperatorSamples:
    """Basis fields and transformed operators at quadrature nodes.

    ``cov[j, q, i, k] = nabla_k w_j^i``; ``F`` and ``G`` are ``(m, nq, 2)``.
    """

    values: np.ndarray
    cov: np.ndarray
    F: np.ndarray
    G: np.ndarray


def covariant_fields(values, grads, hessians, metric):
    """Covariant gradient, ``F`` and ``G`` of sampled fields.

    ``values (k, nq, 2)``, ``grads[..., i, k] = d_k u^i``,
    ``hessians[..., i, j, k] = d_j d_k u^i``.
    """
    nq = values.shape[1]
    Phi = np.broadcast_to(metric.Phi, (nq, 2, 2, 2))
    dPhi = np.broadcast_to(metric.dPhi, (nq, 2, 2, 2, 2))
    # nabla_k u^i = d_k u^i + Phi^i_kl u^l
    cov = grads + np.einsum("qikl,aql->aqik", Phi, values)
    # d_j (nabla_k u^i) = d_j d_k u^i + d_j Phi^i_kl u^l + Phi^i_kl d_j u^l
    d_cov = (np.einsum("aqijk->aqikj", hessians)
             + np.einsum("qiklj,aql->aqikj", dPhi, values)
             + np.einsum("qikl,aqlj->aqikj", Phi, grads))
    # nabla_j nabla_k u^i = d_j(nabla_k u^i) + Phi^i_jl nabla_k u^l - Phi^l_jk nabla_l u^i
    dd = (d_cov
          + np.einsum("qijl,aqlk->aqikj", Phi, cov)
          - np.einsum("qljk,aqil->aqikj", Phi, cov))
    F = np.einsum("qjk,aqikj->aqi", np.broadcast_to(metric.h_up, (nq, 2, 2)), dd)
    dydt = np.broadcast_to(metric.dy_dt, (nq, 2))
    B = np.einsum("qki,qkj->qij", np.broadcast_to(metric.M, (nq, 2, 2)),
                  np.broadcast_to(metric.d2x_dsdy, (nq, 2, 2)))
    G = np.einsum("qj,aqij->aqi", dydt, cov) + np.einsum("qij,aqj->aqi", B, values)
    return cov, F, G


def covariant_apply(snapshot: BasisSnapshot, metric) -> OperatorSamples:
    cov, F, G = covariant_fields(snapshot.values, snapshot.grads, snapshot.hessians, metric)
    return OperatorSamples(snapshot.values, cov, F, G)


def convective(u, cov_v):
    """``N(u, v)^i = u^j nabla_j v^i`` for sampled ``u (.., nq, 2)``."""
    return np.einsum("...qj,...qij->...qi", u, cov_v)


# ---------------------------------------------------------------------------
# forcing and noise in the reference frame

def make_data_field(kind, amplitude=1.0, mode=1, family="sin2") -> Optional[Callable]:
    """Deterministic reference-frame sampler ``(y, s) -> (..., 2)``.

    ``zero`` returns ``None``; ``constant`` is ``amplitude * (1, 0)``;
    ``mode`` is ``amplitude`` times the raw element number ``mode`` of
    ``family``.
    """
    from .basis import mode_indices

    if kind == "zero" or amplitude == 0:
        return None
    if kind == "constant":
        vec = np.array([float(amplitude), 0.0])
        fn = lambda y, s: np.broadcast_to(vec, np.shape(y)).copy()
    elif kind == "mode":
        p, q = mode_indices(mode)[-1]
        fn = lambda y, s: amplitude * _field_parts(p, q, y, family)[0]
    else:
        raise ValueError(f"unknown data kind {kind!r}")
    fn.time_independent = True
    return fn


def _frozen(data, quad):
    """Sample a time-independent field once; other fields pass through."""
    if data is None or not getattr(data, "time_independent", False):
        return data
    vals = np.asarray(data(quad.nodes, 0.0), dtype=float)
    return lambda y, s: vals


def _project_raw(data, table, metric, s):
    """``<data(s), e_a>_s`` for every raw element; zeros when ``data`` is None."""
    if data is None:
        return np.zeros(table.m)
    quad = table.quad
    vals = np.asarray(data(quad.nodes, s), dtype=float)
    return weighted_inner(table.E, vals, metric, quad)


# ---------------------------------------------------------------------------
# tensors

@dataclass(frozen=True)
class GalerkinTensors:
    """Coefficient-system data at one time node.

    ``stiffness[j, k] = <nabla w_k, nabla w_j>`` and
    ``transport[j, k] = <w_k' + G w_k, w_j>`` are kept for diagnostics;
    ``a_lin = transport + stiffness`` up to quadrature and difference error.
    """

    s: float
    a_lin: np.ndarray
    a_tri: np.ndarray
    f_vec: np.ndarray
    sigma_vec: np.ndarray
    stiffness: np.ndarray
    transport: np.ndarray

    @property
    def m(self):
        return len(self.f_vec)


@dataclass(frozen=True)
class TensorSeries:
    """Stacked :class:`GalerkinTensors` on a time grid (leading axis N + 1)."""

    s: np.ndarray
    a_lin: np.ndarray
    a_tri: np.ndarray
    f_vec: np.ndarray
    sigma_vec: np.ndarray
    stiffness: np.ndarray
    transport: np.ndarray

    @property
    def m(self):
        return self.a_lin.shape[1]

    def node(self, n) -> GalerkinTensors:
        return GalerkinTensors(float(self.s[n]), self.a_lin[n], self.a_tri[n],
                               self.f_vec[n], self.sigma_vec[n], self.stiffness[n],
                               self.transport[n])

    def truncate(self, m) -> "TensorSeries":
        """Tensors of the first ``m`` modes.  Exact because the orthonormal
        basis is nested: ``w_j`` does not depend on how many modes follow."""
        if m > self.m:
            raise ValueError(f"cannot truncate {self.m} modes to {m}")
        return TensorSeries(self.s, self.a_lin[:, :m, :m], self.a_tri[:, :m, :m, :m],
                            self.f_vec[:, :m], self.sigma_vec[:, :m],
                            self.stiffness[:, :m, :m], self.transport[:, :m, :m])

    def without_convection(self) -> "TensorSeries":
        return TensorSeries(self.s, self.a_lin, np.zeros_like(self.a_tri), self.f_vec,
                            self.sigma_vec, self.stiffness, self.transport)


def assemble_tensors(snapshot: BasisSnapshot, dmap, forcing=None, noise=None,
                     quad=None) -> GalerkinTensors:
    """General-path tensors at one node (``snapshot`` must carry ``R'``)."""
    quad = quad or snapshot.quad
    s = snapshot.s
    metric = metric_at(dmap, quad.nodes, s)
    ops = covariant_apply(snapshot, metric)
    W = ops.values
    # weighted_inner(u_k, w_j) has rows k; transpose to [j, k]
    transport = weighted_inner(snapshot.time_derivative + ops.G, W, metric, quad).T
    Fpart = weighted_inner(ops.F, W, metric, quad).T
    stiffness = gradient_inner(ops.cov, ops.cov, metric, quad)
    Wh = np.einsum("q,qij,aqj->aqi", _wJ(metric, quad), _h(metric.h_down, quad.size), W)
    a_tri = _kernels.tri_contract(Wh, W, ops.cov)
    f_vec = snapshot.R @ _project_raw(forcing, snapshot.table, metric, s)
    sig = snapshot.R @ _project_raw(noise, snapshot.table, metric, s)
    return GalerkinTensors(float(s), transport - Fpart, a_tri, f_vec, sig,
                           stiffness, transport)


@dataclass(frozen=True, eq=False)
class RawMoments:
    """Metric-free integrals of the raw elements over the unit square.

    Index names: ``a`` test element, ``b``/``c`` trial elements.

    * ``P[i, j, a, b] = int e_a^i e_b^j``
    * ``Q[i, k, j, l, a, b] = int d_k e_a^i d_l e_b^j``
    * ``H[i, j, k, p, a, b] = int d_j d_k e_b^i e_a^p``
    * ``D[j, i, p, a, b] = int d_j e_b^i e_a^p``
    * ``Y[l, j, i, p, a, b] = int y^l d_j e_b^i e_a^p``
    * ``T[i, p, a, b, c] = int e_a^p e_b^j d_j e_c^i``
    """

    P: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    D: np.ndarray
    Y: np.ndarray
    T: np.ndarray


@lru_cache(maxsize=8)
def _moments_cached(table: RawTable) -> RawMoments:
    w = table.quad.weights
    y = table.quad.nodes
    E, dE, ddE = table.E, table.dE, table.ddE
    wE = E * w[None, :, None]
    P = np.einsum("aqi,bqj->ijab", wE, E, optimize=True)
    Q = np.einsum("aqik,bqjl,q->ikjlab", dE, dE, w, optimize=True)
    H = np.einsum("bqijk,aqp->ijkpab", ddE, wE, optimize=True)
    D = np.einsum("bqij,aqp->jipab", dE, wE, optimize=True)
    Y = np.einsum("ql,bqij,aqp->ljipab", y, dE, wE, optimize=True)
    T = np.empty((2, 2) + (table.m,) * 3)
    for i in range(2):
        for p in range(2):
            Wh = np.zeros_like(E)
            Wh[:, :, i] = wE[:, :, p]
            T[i, p] = _kernels.tri_contract(Wh, E, dE)
    return RawMoments(P, Q, H, D, Y, T)


def raw_moments(table: RawTable) -> RawMoments:
    return _moments_cached(table)


def _data_moments(data, table):
    """``int e_a^i d^j`` for a time-independent field ``d``, else None."""
    if data is None or not getattr(data, "time_independent", False):
        return None
    vals = np.asarray(data(table.quad.nodes, 0.0), dtype=float)
    return np.einsum("aqi,qj,q->ija", table.E, vals, table.quad.weights, optimize=True)


def _affine_project(data, mom, table, metric, s):
    if mom is None:
        return _project_raw(data, table, metric, s)
    return metric.J * np.einsum("ij,ija->a", metric.h_down, mom)


def _affine_node(mom, metric, dmap, s, R, Rdot, f_raw, sig_raw, linear):
    J, hd, hu, M = metric.J, metric.h_down, metric.h_up, metric.M
    c = dmap.dy_dt(np.zeros(2), s)
    A = np.stack([dmap.dy_dt(np.eye(2)[l], s) - c for l in range(2)], axis=-1)  # A[j, l]
    B = M.T @ metric.d2x_dsdy
    gram = J * np.einsum("ij,ijab->ab", hd, mom.P)
    S_raw = J * np.einsum("ij,kl,ikjlab->ab", hd, hu, mom.Q)
    F_raw = J * np.einsum("ip,jk,ijkpab->ab", hd, hu, mom.H)
    G_raw = J * (np.einsum("ip,jl,ljipab->ab", hd, A, mom.Y)
                 + np.einsum("ip,j,jipab->ab", hd, c, mom.D)
                 + np.einsum("ip,iq,pqab->ab", hd, B, mom.P))
    transport = R @ G_raw @ R.T + R @ gram @ Rdot.T
    a_lin = transport - R @ F_raw @ R.T
    stiffness = R @ S_raw @ R.T
    if linear:
        a_tri = np.zeros((R.shape[0],) * 3)
    else:
        T_raw = J * np.einsum("ip,ipabc->abc", hd, mom.T)
        a_tri = np.tensordot(R, T_raw, axes=(1, 0))
        a_tri = np.tensordot(a_tri, R, axes=(1, 1)).transpose(0, 2, 1)
        a_tri = np.tensordot(a_tri, R, axes=(2, 1))
    return a_lin, a_tri, R @ f_raw, R @ sig_raw, stiffness, transport


def assemble_series(dmap, series: BasisSeries, forcing=None, noise=None,
                    linear=False, force_general=False) -> TensorSeries:
    """Tensors at every node of ``series.grid``.

    ``linear`` skips the convective tensor (left as zeros).
    ``force_general`` disables the affine fast path.
    """
    table = series.table
    quad = table.quad
    nodes = series.grid.nodes
    N1, m = len(nodes), series.m
    a_lin = np.empty((N1, m, m))
    a_tri = np.zeros((N1, m, m, m))
    f_vec = np.empty((N1, m))
    sig = np.empty((N1, m))
    stiff = np.empty((N1, m, m))
    trans = np.empty((N1, m, m))
    fast = dmap.affine and not force_general
    mom = raw_moments(table) if fast else None
    if fast:
        f_mom, s_mom = _data_moments(forcing, table), _data_moments(noise, table)
    forcing, noise = _frozen(forcing, quad), _frozen(noise, quad)
    for n, s in enumerate(nodes):
        R, Rdot = series.R[n], series.Rdot[n]
        if fast:
            metric = metric_at(dmap, np.full(2, 0.5), s)
            f_raw = _affine_project(forcing, f_mom, table, metric, s)
            s_raw = _affine_project(noise, s_mom, table, metric, s)
            out = _affine_node(mom, metric, dmap, s, R, Rdot, f_raw, s_raw, linear)
            a_lin[n], a_tri[n], f_vec[n], sig[n], stiff[n], trans[n] = out
        else:
            t = assemble_tensors(series.snapshot(n), dmap, forcing, noise, quad)
            a_lin[n], f_vec[n], sig[n] = t.a_lin, t.f_vec, t.sigma_vec
            stiff[n], trans[n] = t.stiffness, t.transport
            if not linear:
                a_tri[n] = t.a_tri
    return TensorSeries(nodes.copy(), a_lin, a_tri, f_vec, sig, stiff, trans)


def write_tensor_csv(path, tensors: TensorSeries, which="a_lin"):
    """Debug dump with header ``s,j,k,value`` (or ``s,j,k,l,value`` for
    ``a_tri``); indices are 1-based."""
    data = getattr(tensors, which)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if data.ndim == 3:
            w.writerow(["s", "j", "k", "value"])
        else:
            w.writerow(["s", "j", "k", "l", "value"])
        for n, s in enumerate(tensors.s):
            for idx in np.ndindex(data.shape[1:]):
                w.writerow([f"{s:.17g}"] + [str(i + 1) for i in idx]
                           + [f"{data[(n,) + idx]:.17g}"])


# ---------------------------------------------------------------------------
# physical-frame quadrature

@dataclass(frozen=True)
class PhysicalQuadrature:
    """Nodes and weights covering ``D(t)`` (image of a square rule)."""

    t: float
    nodes: np.ndarray
    weights: np.ndarray


def physical_quadrature(dmap, t, quad) -> PhysicalQuadrature:
    """Push a square rule into ``D(t)``: ``x_q = L^{-1}(y_q)``, weight times
    ``|det dx/dy|``."""
    x = dmap.inverse(quad.nodes, t)
    jac = np.abs(np.linalg.det(dmap.jac_inverse(quad.nodes, t)))
    return PhysicalQuadrature(float(t), x, quad.weights * jac)


def physical_inner(u, v, pq):
    return float(np.einsum("qi,qi,q->", u(pq.nodes, pq.t), v(pq.nodes, pq.t), pq.weights))


def physical_gradient_inner(u, v, pq):
    return float(np.einsum("qik,qik,q->", u.grad(pq.nodes, pq.t), v.grad(pq.nodes, pq.t),
                           pq.weights))


def trilinear_b(u, v, w, pq):
    """``b_t(u, v, w) = int (u . grad) v . w dx`` for physical samplers with
    gradients (``grad[..., i, k] = d v^i / d x^k``)."""
    x, t = pq.nodes, pq.t
    return float(np.einsum("qk,qik,qi,q->", u(x, t), v.grad(x, t), w(x, t), pq.weights))
