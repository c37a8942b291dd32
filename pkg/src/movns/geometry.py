"""Level-preserving maps between the moving physical domain and the unit square.

Index conventions used throughout the package (all arrays carry the point
axes first and the tensor axes last):

* ``M[..., k, j] = dy^j / dx^k``           forward Jacobian (row = x-derivative)
* ``K[..., l, j] = dx^l / dy^j``           inverse Jacobian
* ``D2[..., l, i, j] = d^2 x^l / dy^i dy^j``
* ``Phi[..., k, i, j]``                    Christoffel-type symbol Phi^k_{ij}
* ``dPhi[..., k, i, j, l] = d Phi^k_{ij} / dy^l``

Vector fields are row vectors in the same sense: a physical field ``u`` is
sent to the reference frame as ``u_ref = u @ M`` and recovered by
``u = u_ref @ inv(M)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import sympy

from .errors import (FrameMismatch, NonConstantJacobian, NonInvertibleJacobian,
                     OutOfDomain)

PHYSICAL = "physical"
REFERENCE = "reference"

FD_STEP = 1e-5
FD_STEP_SECOND = 1e-4
DET_FLOOR = 1e-8
JACOBIAN_TOL = 1e-8


@dataclass(frozen=True)
class MovingDomainMap:
    """The diffeomorphism ``(x, t) -> (y, t)`` together with its derivatives.

    All callables are vectorised over leading point axes; the time argument
    is a scalar.  ``d3x_dydydy`` is optional and only used to build the
    derivative of the Christoffel symbols for non-affine maps.
    """

    forward: Callable
    inverse: Callable
    jac_forward: Callable
    jac_inverse: Callable
    d2x_dydy: Callable
    dy_dt: Callable
    d2x_dsdy: Callable
    horizon: float
    name: str = "user"
    affine: bool = False
    d3x_dydydy: Optional[Callable] = None
    det_floor: float = 1e-8
    exact: bool = True  # False when derivatives come from finite differences


@dataclass(frozen=True)
class MetricSample:
    y: np.ndarray
    s: float
    M: np.ndarray
    K: np.ndarray
    J: np.ndarray
    h_up: np.ndarray
    h_down: np.ndarray
    Phi: np.ndarray
    dPhi: np.ndarray
    dy_dt: np.ndarray
    d2x_dsdy: np.ndarray


@dataclass(frozen=True)
class VectorFieldSampler:
    """A vector field ``eval(points, time) -> (..., 2)`` in a declared frame.

    ``grad`` (optional) returns ``G[..., i, j] = d F^i / d z^j``.
    """

    eval: Callable
    frame: str
    grad: Optional[Callable] = None

    def __post_init__(self):
        if self.frame not in (PHYSICAL, REFERENCE):
            raise ValueError(f"unknown frame {self.frame!r}")

    def __call__(self, points, time):
        return self.eval(np.asarray(points, dtype=float), time)


# ---------------------------------------------------------------------------
# expressions over t

_T = sympy.Symbol("t")


def time_function(expr):
    """Compile a sympy-parsable expression in ``t`` into ``(f, df/dt)``."""
    sym = sympy.sympify(expr, locals={"t": _T})
    extra = sym.free_symbols - {_T}
    if extra:
        names = ", ".join(sorted(str(s) for s in extra))
        raise ValueError(f"expression {expr!r} may only depend on t (found {names})")
    f = sympy.lambdify(_T, sym, "numpy")
    df = sympy.lambdify(_T, sympy.diff(sym, _T), "numpy")
    return (lambda t: float(f(t))), (lambda t: float(df(t)))


def _eye_like(shape):
    out = np.zeros(shape + (2, 2))
    out[..., 0, 0] = out[..., 1, 1] = 1.0
    return out


# ---------------------------------------------------------------------------
# affine family: x = K(t) y + b(t)

def affine_map(K, Kdot, horizon, name, b=None, bdot=None) -> MovingDomainMap:
    """Map ``x = K(t) y + b(t)`` given callables for ``K`` and ``dK/dt``."""
    zero = lambda t: np.zeros(2)
    b = b or zero
    bdot = bdot or zero

    def forward(x, t):
        x = np.asarray(x, dtype=float)
        return (x - b(t)) @ np.linalg.inv(K(t)).T

    def inverse(y, s):
        y = np.asarray(y, dtype=float)
        return y @ K(s).T + b(s)

    def jac_forward(x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.linalg.inv(K(t)).T, x.shape[:-1] + (2, 2)).copy()

    def jac_inverse(y, s):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(K(s), y.shape[:-1] + (2, 2)).copy()

    def d2x_dydy(y, s):
        return np.zeros(np.shape(y)[:-1] + (2, 2, 2))

    def dy_dt(y, s):
        y = np.asarray(y, dtype=float)
        Kinv = np.linalg.inv(K(s))
        return -(y @ Kdot(s).T + bdot(s)) @ Kinv.T

    def d2x_dsdy(y, s):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(Kdot(s), y.shape[:-1] + (2, 2)).copy()

    def d3x(y, s):
        return np.zeros(np.shape(y)[:-1] + (2, 2, 2, 2))

    return MovingDomainMap(forward, inverse, jac_forward, jac_inverse, d2x_dydy,
                           dy_dt, d2x_dsdy, float(horizon), name=name,
                           affine=True, d3x_dydydy=d3x)


def identity_map(horizon=1.0) -> MovingDomainMap:
    I = np.eye(2)
    Z = np.zeros((2, 2))
    return affine_map(lambda t: I, lambda t: Z, horizon, "identity")


def dilation_map(r="1 + t", horizon=1.0) -> MovingDomainMap:
    """``x = r(t) y`` with ``r`` a positive expression in ``t``."""
    rf, rdot = time_function(r)
    ts = np.linspace(0.0, horizon, 257)
    if min(rf(t) for t in ts) <= 0.0:
        raise ValueError(f"dilation factor {r!r} must stay positive on [0, {horizon}]")
    return affine_map(lambda t: rf(t) * np.eye(2), lambda t: rdot(t) * np.eye(2),
                      horizon, "dilation")


def rotation_map(theta="t", horizon=1.0) -> MovingDomainMap:
    """Rigid rotation ``x = R(theta(t)) y`` about the origin."""
    th, thdot = time_function(theta)

    def K(t):
        c, s = np.cos(th(t)), np.sin(th(t))
        return np.array([[c, -s], [s, c]])

    def Kdot(t):
        c, s = np.cos(th(t)), np.sin(th(t))
        return thdot(t) * np.array([[-s, -c], [c, -s]])

    return affine_map(K, Kdot, horizon, "rotation")


def shear_map(alpha="0.5*t", horizon=1.0) -> MovingDomainMap:
    """``x^1 = y^1 + alpha(t) y^2``, ``x^2 = y^2``."""
    a, adot = time_function(alpha)
    return affine_map(lambda t: np.array([[1.0, a(t)], [0.0, 1.0]]),
                      lambda t: np.array([[0.0, adot(t)], [0.0, 0.0]]),
                      horizon, "shear")


def wavy_shear_map(alpha="0.25*t", horizon=1.0) -> MovingDomainMap:
    """Non-affine, volume preserving: ``x^1 = y^1 + alpha(t) sin(pi y^2)``.

    Gives non-zero Christoffel symbols with closed-form derivatives, which the
    affine families cannot.
    """
    a, adot = time_function(alpha)
    pi = np.pi

    def forward(x, t):
        x = np.asarray(x, dtype=float)
        y = x.copy()
        y[..., 0] = x[..., 0] - a(t) * np.sin(pi * x[..., 1])
        return y

    def inverse(y, s):
        y = np.asarray(y, dtype=float)
        x = y.copy()
        x[..., 0] = y[..., 0] + a(s) * np.sin(pi * y[..., 1])
        return x

    def jac_forward(x, t):
        x = np.asarray(x, dtype=float)
        M = _eye_like(x.shape[:-1])
        M[..., 1, 0] = -a(t) * pi * np.cos(pi * x[..., 1])
        return M

    def jac_inverse(y, s):
        y = np.asarray(y, dtype=float)
        K = _eye_like(y.shape[:-1])
        K[..., 0, 1] = a(s) * pi * np.cos(pi * y[..., 1])
        return K

    def d2x_dydy(y, s):
        y = np.asarray(y, dtype=float)
        D2 = np.zeros(y.shape[:-1] + (2, 2, 2))
        D2[..., 0, 1, 1] = -a(s) * pi ** 2 * np.sin(pi * y[..., 1])
        return D2

    def d3x(y, s):
        y = np.asarray(y, dtype=float)
        D3 = np.zeros(y.shape[:-1] + (2, 2, 2, 2))
        D3[..., 0, 1, 1, 1] = -a(s) * pi ** 3 * np.cos(pi * y[..., 1])
        return D3

    def dy_dt(y, s):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        out[..., 0] = -adot(s) * np.sin(pi * y[..., 1])
        return out

    def d2x_dsdy(y, s):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (2, 2))
        out[..., 0, 1] = adot(s) * pi * np.cos(pi * y[..., 1])
        return out

    return MovingDomainMap(forward, inverse, jac_forward, jac_inverse, d2x_dydy,
                           dy_dt, d2x_dsdy, float(horizon), name="wavy_shear",
                           affine=False, d3x_dydydy=d3x)


# ---------------------------------------------------------------------------
# user maps: forward/inverse only, derivatives by central differences

def user_map(forward, inverse, horizon=1.0, name="user", warn=True) -> MovingDomainMap:
    """Wrap user ``forward(x, t)`` / ``inverse(y, s)`` with finite-difference
    derivatives.

    First derivatives use a central step of 1e-5; second and mixed
    space-time derivatives use 1e-4 to keep round-off below truncation.
    Expect roughly 1e-8 accuracy in the metric and 1e-6 in the Christoffel
    symbols, which is far below the built-in (closed form) maps.
    """
    if warn:
        warnings.warn("user map: derivatives are approximated by central finite "
                      "differences; metric identities hold only to ~1e-8",
                      stacklevel=2)
    h, h2 = FD_STEP, FD_STEP_SECOND
    E = np.eye(2)

    def _jac(fun, z, t, step):
        z = np.asarray(z, dtype=float)
        out = np.empty(z.shape[:-1] + (2, 2))
        for a in range(2):
            dp = fun(z + step * E[a], t)
            dm = fun(z - step * E[a], t)
            # out[k, j] = d out_j / d z_k for the forward map, transposed later
            out[..., a, :] = (dp - dm) / (2 * step)
        return out

    def jac_forward(x, t):
        return _jac(forward, x, t, h)

    def jac_inverse(y, s):
        return np.swapaxes(_jac(inverse, y, s, h), -1, -2)

    def d2x_dydy(y, s):
        y = np.asarray(y, dtype=float)
        out = np.empty(y.shape[:-1] + (2, 2, 2))
        for i in range(2):
            for j in range(2):
                pp = inverse(y + h2 * (E[i] + E[j]), s)
                pm = inverse(y + h2 * (E[i] - E[j]), s)
                mp = inverse(y - h2 * (E[i] - E[j]), s)
                mm = inverse(y - h2 * (E[i] + E[j]), s)
                out[..., :, i, j] = (pp - pm - mp + mm) / (4 * h2 * h2)
        return out

    def dy_dt(y, s):
        x = inverse(y, s)
        return (forward(x, s + h) - forward(x, s - h)) / (2 * h)

    def d2x_dsdy(y, s):
        return (jac_inverse(y, s + h2) - jac_inverse(y, s - h2)) / (2 * h2)

    return MovingDomainMap(forward, inverse, jac_forward, jac_inverse, d2x_dydy,
                           dy_dt, d2x_dsdy, float(horizon), name=name, affine=False,
                           exact=False)


def user_map_from_expressions(y_exprs, x_exprs, horizon=1.0) -> MovingDomainMap:
    """Build a user map from expression strings.

    ``y_exprs`` give the forward map in ``x1, x2, t``; ``x_exprs`` give the
    inverse in ``y1, y2, t``.
    """
    x1, x2, y1, y2 = sympy.symbols("x1 x2 y1 y2")

    def compile_pair(exprs, a, b):
        fs = []
        for e in exprs:
            sym = sympy.sympify(e, locals={"t": _T, a.name: a, b.name: b})
            extra = sym.free_symbols - {a, b, _T}
            if extra:
                raise ValueError(f"expression {e!r} uses unknown symbols "
                                 f"{sorted(str(s) for s in extra)}")
            fs.append(sympy.lambdify((a, b, _T), sym, "numpy"))
        return fs

    fy = compile_pair(y_exprs, x1, x2)
    fx = compile_pair(x_exprs, y1, y2)

    def _apply(fs, z, t):
        z = np.asarray(z, dtype=float)
        out = np.empty(z.shape)
        for k, f in enumerate(fs):
            out[..., k] = f(z[..., 0], z[..., 1], t)
        return out

    return user_map(lambda x, t: _apply(fy, x, t), lambda y, s: _apply(fx, y, s),
                    horizon, name="user", warn=False)


# ---------------------------------------------------------------------------
# metric

def reference_contains(y, tol=1e-12):
    y = np.asarray(y, dtype=float)
    return np.all((y >= -tol) & (y <= 1.0 + tol), axis=-1)


def physical_contains(dmap, x, t, tol=1e-12):
    return reference_contains(dmap.forward(np.asarray(x, dtype=float), t), tol)


def _christoffel(M, D2):
    # Phi^k_ij = sum_l (dy^k/dx^l) d2x^l/dy^i dy^j,  dy^k/dx^l = M[l, k]
    return np.einsum("...lk,...lij->...kij", M, D2)


def _christoffel_grad(dmap, y, s, M, D2):
    if dmap.affine:
        return np.zeros(np.shape(y)[:-1] + (2, 2, 2, 2))
    if dmap.d3x_dydydy is not None:
        D3 = dmap.d3x_dydydy(y, s)
        Kinv = np.swapaxes(M, -1, -2)
        # d_l Kinv = -Kinv (d_l K) Kinv, with d_l K[a, b] = D2[a, b, l]
        dKinv = -np.einsum("...ka,...abl,...bp->...kpl", Kinv, D2, Kinv)
        return (np.einsum("...kpl,...pij->...kijl", dKinv, D2)
                + np.einsum("...kp,...pijl->...kijl", Kinv, D3))
    out = np.empty(np.shape(y)[:-1] + (2, 2, 2, 2))
    E = np.eye(2)
    for l in range(2):
        yp, ym = y + FD_STEP * E[l], y - FD_STEP * E[l]
        Pp = _christoffel(np.linalg.inv(np.swapaxes(dmap.jac_inverse(yp, s), -1, -2)),
                          dmap.d2x_dydy(yp, s))
        Pm = _christoffel(np.linalg.inv(np.swapaxes(dmap.jac_inverse(ym, s), -1, -2)),
                          dmap.d2x_dydy(ym, s))
        out[..., l] = (Pp - Pm) / (2 * FD_STEP)
    return out


def metric_at(dmap, y, s, det_floor=None, check_domain=True,
              jacobian_tol=JACOBIAN_TOL) -> MetricSample:
    """All metric data of the map at reference points ``y`` and time ``s``.

    ``y`` may be a single point ``(2,)`` or a batch ``(..., 2)``.  For a
    batch the spatial constancy of ``det M`` is checked.
    """
    y = np.asarray(y, dtype=float)
    det_floor = dmap.det_floor if det_floor is None else det_floor
    if check_domain and not np.all(reference_contains(y)):
        raise OutOfDomain(f"reference point outside the unit square at s={s}")
    x = dmap.inverse(y, s)
    M = dmap.jac_forward(x, s)
    K = dmap.jac_inverse(y, s)
    detM = np.linalg.det(M)
    if np.any(~np.isfinite(detM)) or np.any(detM < det_floor):
        raise NonInvertibleJacobian(
            f"det M = {np.min(detM):.3e} below floor {det_floor:g} at s={s} "
            f"(map {dmap.name})")
    J = 1.0 / detM
    if J.size > 1 and np.ptp(J) > jacobian_tol * np.max(np.abs(J)):
        raise NonConstantJacobian(
            f"det M varies in space by {np.ptp(J) / np.max(J):.2e} at s={s}")
    D2 = dmap.d2x_dydy(y, s)
    h_up = np.einsum("...ki,...kj->...ij", M, M)
    h_down = np.einsum("...ki,...kj->...ij", K, K)
    Phi = _christoffel(M, D2)
    dPhi = _christoffel_grad(dmap, y, s, M, D2)
    return MetricSample(y=y, s=float(s), M=M, K=K, J=J, h_up=h_up, h_down=h_down,
                        Phi=Phi, dPhi=dPhi, dy_dt=dmap.dy_dt(y, s),
                        d2x_dsdy=dmap.d2x_dsdy(y, s))


def christoffel_from_metric(dmap, y, s):
    """Phi from the metric-tensor form ``1/2 h^kl (d_j h_il + d_i h_jl - d_l h_ij)``.

    Derivatives of ``h_ij = sum_k K_ki K_kj`` are taken with the product rule
    on the map's own second derivatives.
    """
    y = np.asarray(y, dtype=float)
    K = dmap.jac_inverse(y, s)
    D2 = dmap.d2x_dydy(y, s)
    M = dmap.jac_forward(dmap.inverse(y, s), s)
    h_up = np.einsum("...ki,...kj->...ij", M, M)
    # dh[i, j, l] = d h_ij / d y^l
    dh = (np.einsum("...kil,...kj->...ijl", D2, K)
          + np.einsum("...ki,...kjl->...ijl", K, D2))
    t = (np.einsum("...ilj->...ijl", dh) + np.einsum("...jli->...ijl", dh)
         - dh)
    return 0.5 * np.einsum("...kl,...ijl->...kij", h_up, t)


# ---------------------------------------------------------------------------
# field transport

def push_forward(dmap, field: VectorFieldSampler) -> VectorFieldSampler:
    """Physical field ``u`` -> reference field ``u(L^{-1}(y,s)) M(L^{-1}(y,s))``."""
    if field.frame != PHYSICAL:
        raise FrameMismatch("push_forward expects a physical-frame field")

    def ev(y, s):
        x = dmap.inverse(y, s)
        return np.einsum("...k,...kj->...j", field.eval(x, s), dmap.jac_forward(x, s))

    grad = None
    if field.grad is not None:
        def grad(y, s):
            x = dmap.inverse(y, s)
            M = dmap.jac_forward(x, s)
            K = dmap.jac_inverse(y, s)
            D2 = dmap.d2x_dydy(y, s)
            u = field.eval(x, s)
            du = field.grad(x, s)  # du[k, b] = du^k/dx^b
            Kinv = np.swapaxes(M, -1, -2)
            dKinv = -np.einsum("...ka,...abl,...bp->...kpl", Kinv, D2, Kinv)
            # u_ref^j = sum_k u^k Kinv[j, k]
            return (np.einsum("...kb,...bc,...jk->...jc", du, K, Kinv)
                    + np.einsum("...k,...jkc->...jc", u, dKinv))

    return VectorFieldSampler(ev, REFERENCE, grad)


def pull_back(dmap, field: VectorFieldSampler) -> VectorFieldSampler:
    """Reference field -> physical field ``u_ref(L(x,t)) M(x,t)^{-1}``."""
    if field.frame != REFERENCE:
        raise FrameMismatch("pull_back expects a reference-frame field")

    def ev(x, t):
        y = dmap.forward(x, t)
        Minv = np.linalg.inv(dmap.jac_forward(x, t))
        return np.einsum("...j,...jk->...k", field.eval(y, t), Minv)

    grad = None
    if field.grad is not None:
        def grad(x, t):
            y = dmap.forward(x, t)
            M = dmap.jac_forward(x, t)
            K = dmap.jac_inverse(y, t)
            D2 = dmap.d2x_dydy(y, t)
            v = field.eval(y, t)
            dv = field.grad(y, t)
            # u^k = K[k, j] v^j ; d/dx^b = sum_c M[b, c] d/dy^c
            dy = (np.einsum("...kjc,...j->...kc", D2, v)
                  + np.einsum("...kj,...jc->...kc", K, dv))
            return np.einsum("...kc,...bc->...kb", dy, M)

    return VectorFieldSampler(ev, PHYSICAL, grad)


def curl_sampler(dpsi, d2psi, frame) -> VectorFieldSampler:
    """Divergence-free field ``(d psi/dz^2, -d psi/dz^1)`` from a stream
    function's gradient ``dpsi(z, t) -> (..., 2)`` and Hessian."""

    def ev(z, t):
        g = dpsi(z, t)
        return np.stack([g[..., 1], -g[..., 0]], axis=-1)

    def grad(z, t):
        H = d2psi(z, t)
        return np.stack([H[..., 1, :], -H[..., 0, :]], axis=-2)

    return VectorFieldSampler(ev, frame, grad)


# ---------------------------------------------------------------------------
# residual checks

def _random_samples(dmap, n_samples, seed):
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.random((n_samples, 2)), rng.random(n_samples) * dmap.horizon


def inverse_identity_residual(dmap, n_samples=1000, seed=0) -> float:
    """Max over random ``(y, s)`` of ``|K M^T - I|`` and the four cofactor
    relations between the entries of ``M`` and ``K``."""
    ys, ss = _random_samples(dmap, n_samples, seed)
    worst = 0.0
    I = np.eye(2)
    for y, s in zip(ys, ss):
        K = dmap.jac_inverse(y, s)
        M = dmap.jac_forward(dmap.inverse(y, s), s)
        Jinv = np.linalg.det(M)
        cof = np.array([M[0, 0] - Jinv * K[1, 1], M[0, 1] + Jinv * K[1, 0],
                        M[1, 0] + Jinv * K[0, 1], M[1, 1] - Jinv * K[0, 0]])
        worst = max(worst, np.max(np.abs(K @ M.T - I)), np.max(np.abs(cof)))
    return float(worst)


def metric_identity_residual(dmap, n_samples=1000, seed=0) -> float:
    """Max of ``|h^ij h_jk - delta|`` and ``|det h_ij - J^2| / J^2``."""
    ys, ss = _random_samples(dmap, n_samples, seed)
    worst = 0.0
    for y, s in zip(ys, ss):
        g = metric_at(dmap, y, s)
        prod = g.h_up @ g.h_down
        worst = max(worst, np.max(np.abs(prod - np.eye(2))),
                    abs(np.linalg.det(g.h_down) - g.J ** 2) / g.J ** 2)
    return float(worst)


def christoffel_residual(dmap, n_samples=200, seed=0) -> float:
    """Max difference between the two forms of Phi, plus its symmetry defect."""
    ys, ss = _random_samples(dmap, n_samples, seed)
    worst = 0.0
    for y, s in zip(ys, ss):
        g = metric_at(dmap, y, s)
        alt = christoffel_from_metric(dmap, y, s)
        worst = max(worst, np.max(np.abs(g.Phi - alt)),
                    np.max(np.abs(g.Phi - np.swapaxes(g.Phi, -1, -2))))
    return float(worst)


def divergence_residual(field: VectorFieldSampler, frame, t, n_samples=200,
                        fd_step=1e-3, dmap=None, seed=0) -> float:
    """Max |central-difference divergence| of ``field`` at random interior points.

    Reference-frame points are drawn at least ``fd_step`` from the edge of
    the unit square.  Physical-frame points are drawn inside ``D(t)`` through
    ``dmap`` and kept only if the whole stencil lies inside.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    if field.frame != frame:
        raise FrameMismatch(f"field is in the {field.frame} frame, not {frame}")
    rng = np.random.default_rng(seed)
    E = np.eye(2)
    if frame == REFERENCE:
        pts = fd_step + (1 - 2 * fd_step) * rng.random((n_samples, 2))
    else:
        if dmap is None:
            raise ValueError("a map is needed to sample the physical domain")
        pts = dmap.inverse(0.02 + 0.96 * rng.random((n_samples, 2)), t)
        stencil_ok = np.ones(n_samples, dtype=bool)
        for a in range(2):
            for sgn in (1, -1):
                stencil_ok &= physical_contains(dmap, pts + sgn * fd_step * E[a], t)
        pts = pts[stencil_ok]
        if len(pts) == 0:
            raise OutOfDomain("no admissible sample points inside D(t)")
    div = np.zeros(len(pts))
    for a in range(2):
        div += (field(pts + fd_step * E[a], t)[:, a]
                - field(pts - fd_step * E[a], t)[:, a]) / (2 * fd_step)
    return float(np.max(np.abs(div)))
