"""Euler-Maruyama integration of the Galerkin coefficient system.

A :class:`Problem` bundles the map, the moving basis and the assembled
tensors.  Tensors are shared read-only between paths, so many seeds can be
integrated at once (:func:`solve_batch`); each path is strictly sequential
in time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .assembly import TensorSeries, assemble_series, make_data_field, weighted_inner
from .basis import BasisSeries, TimeGrid, build_basis_series
from .errors import BlowUpError, NonFiniteError, OutOfDomain
from .geometry import MovingDomainMap, metric_at, reference_contains
from .quadrature import QuadratureRule, gauss_legendre_square


# ---------------------------------------------------------------------------
# Brownian paths

@dataclass(frozen=True)
class BrownianPath:
    seed: int
    grid: TimeGrid
    dW: np.ndarray

    @property
    def W(self):
        return np.concatenate([[0.0], np.cumsum(self.dW)])

    def coarsen(self, factor):
        """Path on a grid ``factor`` times coarser, by summing increments."""
        if self.grid.N % factor:
            raise ValueError(f"{self.grid.N} steps do not split into groups of {factor}")
        return BrownianPath(self.seed, TimeGrid(self.grid.T, self.grid.N // factor),
                            self.dW.reshape(-1, factor).sum(axis=1))


def sample_brownian(seed, grid: TimeGrid, substeps=1) -> BrownianPath:
    """Increments on ``grid`` drawn at ``substeps`` times finer resolution.

    Paths drawn with the same seed are coupled across levels:
    ``sample_brownian(s, grid, 2)`` equals
    ``sample_brownian(s, grid.refine(2)).coarsen(2)`` bitwise.
    """
    rng = np.random.default_rng(seed)
    fine = rng.standard_normal(grid.N * substeps) * np.sqrt(grid.dt / substeps)
    if substeps > 1:
        fine = fine.reshape(grid.N, substeps).sum(axis=1)
    return BrownianPath(int(seed), grid, fine)


def brownian_increments(seeds, grid, substeps=1):
    return np.stack([sample_brownian(s, grid, substeps).dW for s in seeds])


# ---------------------------------------------------------------------------
# single step

def em_step(g, tensors, dW, dt):
    """One explicit Euler-Maruyama step from the left-endpoint tensors."""
    g = np.asarray(g, dtype=float)
    drift = (-tensors.a_lin @ g - np.einsum("jkl,k,l->j", tensors.a_tri, g, g)
             + tensors.f_vec)
    out = g + drift * dt + tensors.sigma_vec * dW
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("Euler-Maruyama step produced a non-finite coefficient")
    return out


# ---------------------------------------------------------------------------
# problems

@dataclass(frozen=True)
class Problem:
    dmap: MovingDomainMap
    grid: TimeGrid
    quad: QuadratureRule
    basis: BasisSeries
    tensors: TensorSeries
    g0: np.ndarray
    ic_remainder: float = 0.0
    blowup_factor: float = 1e6
    forcing: Optional[Callable] = field(default=None, repr=False)
    noise: Optional[Callable] = field(default=None, repr=False)

    @property
    def m(self):
        return self.basis.m

    def truncate(self, m, g0=None, ic_remainder=None):
        """Same data on the first ``m`` modes (nested basis)."""
        if g0 is None:
            g0 = self.g0[:m]
        if ic_remainder is None:
            tail = float(np.sum(self.g0[m:] ** 2))
            ic_remainder = float(np.sqrt(self.ic_remainder ** 2 + tail))
        return Problem(self.dmap, self.grid, self.quad, self.basis.truncate(m),
                       self.tensors.truncate(m), np.asarray(g0, dtype=float),
                       ic_remainder, self.blowup_factor, self.forcing, self.noise)

    def with_tensors(self, tensors):
        return Problem(self.dmap, self.grid, self.quad, self.basis, tensors, self.g0,
                       self.ic_remainder, self.blowup_factor, self.forcing, self.noise)

    def with_initial(self, g0):
        return Problem(self.dmap, self.grid, self.quad, self.basis, self.tensors,
                       np.asarray(g0, dtype=float), self.ic_remainder,
                       self.blowup_factor, self.forcing, self.noise)


def vortex_field(amplitude=1.0):
    """Reference field from the polynomial stream function
    ``c * y1^2 (1 - y1)^2 y2^2 (1 - y2)^2``; it is not in any finite span."""
    c = 256.0 * amplitude  # psi peaks at the centre with value amplitude

    def ev(y, s=0.0):
        y = np.asarray(y, dtype=float)
        a, b = y[..., 0], y[..., 1]
        P, Q = a ** 2 * (1 - a) ** 2, b ** 2 * (1 - b) ** 2
        dP, dQ = 2 * a * (1 - a) * (1 - 2 * a), 2 * b * (1 - b) * (1 - 2 * b)
        return c * np.stack([P * dQ, -dP * Q], axis=-1)

    return ev


def project_initial(field_fn, basis: BasisSeries, dmap, quad=None):
    """``g_j(0) = <u0, w_j(0)>_0`` and the norm of what the span misses."""
    quad = quad or basis.table.quad
    metric = metric_at(dmap, quad.nodes, 0.0)
    vals = np.asarray(field_fn(quad.nodes, 0.0), dtype=float)
    g0 = basis.R[0] @ weighted_inner(basis.table.E, vals, metric, quad)
    total = weighted_inner(vals, vals, metric, quad)
    return g0, float(np.sqrt(max(total - g0 @ g0, 0.0)))


def initial_coefficients(kind, m, basis, dmap, amplitude=1.0, mode=1, quad=None):
    if kind == "zero":
        return np.zeros(m), 0.0
    if kind == "mode":
        if not 1 <= mode <= m:
            raise ValueError(f"initial mode {mode} outside 1..{m}")
        g0 = np.zeros(m)
        g0[mode - 1] = amplitude
        return g0, 0.0
    if kind == "vortex":
        return project_initial(vortex_field(amplitude), basis, dmap, quad)
    raise ValueError(f"unknown initial condition {kind!r}")


def make_problem(dmap, m, grid, quad=None, forcing=None, noise=None, ic="zero",
                 ic_amplitude=1.0, ic_mode=1, linear=False, blowup_factor=1e6,
                 family="sin2"):
    from .quadrature import recommended_order

    quad = quad or gauss_legendre_square(recommended_order(m))
    basis = build_basis_series(dmap, m, grid, quad, family=family)
    tensors = assemble_series(dmap, basis, forcing, noise, linear=linear)
    if isinstance(ic, str):
        g0, rem = initial_coefficients(ic, m, basis, dmap, ic_amplitude, ic_mode, quad)
    else:
        g0, rem = np.asarray(ic, dtype=float), 0.0
    return Problem(dmap, grid, quad, basis, tensors, g0, rem, blowup_factor,
                   forcing, noise)


def build_problem(config, linear=False, m=None) -> Problem:
    """Problem described by a :class:`movns.config.RunConfig`."""
    from .config import build_map

    m = m or config.m
    dmap = build_map(config)
    grid = TimeGrid(config.T, config.n_time)
    quad = gauss_legendre_square(config.quad_order_for(m))
    fam = config.family
    forcing = make_data_field(config.force_kind, config.force_amplitude,
                              config.force_mode, fam)
    noise = make_data_field(config.noise_kind, config.noise_amplitude,
                            config.noise_mode, fam)
    return make_problem(dmap, m, grid, quad, forcing, noise, config.ic_kind,
                        config.ic_amplitude, config.ic_mode, linear,
                        config.blowup_factor, fam)


# ---------------------------------------------------------------------------
# integration

@dataclass(frozen=True)
class CoefficientTrajectory:
    grid: TimeGrid
    g: np.ndarray
    path: BrownianPath
    g0: np.ndarray
    ic_remainder: float
    max_abs: float

    @property
    def m(self):
        return self.g.shape[1]


def blowup_threshold(problem, g0):
    """``factor * (|g0|^2 + forcing and noise budget)``; ``inf`` if all vanish."""
    T = problem.grid.T
    budget = (np.sum(np.asarray(g0) ** 2, axis=-1)
              + T ** 2 * np.max(np.sum(problem.tensors.f_vec ** 2, axis=1))
              + T * np.max(np.sum(problem.tensors.sigma_vec ** 2, axis=1)))
    budget = np.atleast_1d(budget)
    return np.where(budget > 0, problem.blowup_factor * budget, np.inf)


def solve_batch(problem: Problem, dW, g0=None):
    """Integrate ``P`` paths at once.  ``dW (P, N)``; returns ``g (P, N + 1, m)``.

    Raises the typed error of the first failing path.
    """
    dW = np.atleast_2d(np.asarray(dW, dtype=float))
    P = dW.shape[0]
    g0 = problem.g0 if g0 is None else np.asarray(g0, dtype=float)
    G0 = np.broadcast_to(g0, (P, problem.m))
    thr = np.broadcast_to(blowup_threshold(problem, G0), (P,))
    t = problem.tensors
    N = problem.grid.N
    g, node, kind = _kernels.em_integrate(G0, t.a_lin[:N], t.a_tri[:N], t.f_vec[:N],
                                          t.sigma_vec[:N], dW, problem.grid.dt, thr)
    bad = np.nonzero(node >= 0)[0]
    if len(bad):
        p = bad[np.argmin(node[bad])]
        if kind[p] == _kernels.BLOWUP:
            raise BlowUpError(f"path {p}: energy passed {thr[p]:.3e}; reduce dt",
                              node=int(node[p]))
        raise NonFiniteError(f"path {p}: non-finite coefficients", node=int(node[p]))
    return g


def solve(problem: Problem, seed, path: Optional[BrownianPath] = None,
          g0=None) -> CoefficientTrajectory:
    path = path or sample_brownian(seed, problem.grid)
    g0 = problem.g0 if g0 is None else np.asarray(g0, dtype=float)
    g = solve_batch(problem, path.dW[None], g0)[0]
    return CoefficientTrajectory(problem.grid, g, path, g0.copy(), problem.ic_remainder,
                                 float(np.max(np.abs(g))))


# ---------------------------------------------------------------------------
# post-processing

def energy_series(g):
    """``|u_m(t_n)|^2 = sum_j g_j(t_n)^2`` (orthonormal basis)."""
    g = g.g if isinstance(g, CoefficientTrajectory) else np.asarray(g)
    return np.einsum("...j,...j->...", g, g)


def grad_energy_series(g, tensors: TensorSeries):
    """``|nabla u_m(t_n)|^2 = g^T S(t_n) g``."""
    g = g.g if isinstance(g, CoefficientTrajectory) else np.asarray(g)
    return np.einsum("...nj,njk,...nk->...n", g, tensors.stiffness, g)


def energy_residuals(g, dW, tensors: TensorSeries, dt):
    """Per-step residual of the energy identity.

    ``R_n = d|u|^2 + 2 |grad u|^2 dt - 2 (f, u) dt - 2 (sigma, u) dW - |sigma_m|^2 dt``
    with left-endpoint evaluation; ``sigma_m`` is the noise projected on the
    span, the part that actually drives the coefficients.
    """
    g = np.asarray(g)
    N = g.shape[-2] - 1
    E = energy_series(g)
    gl = g[..., :N, :]
    S = tensors.stiffness[:N]
    grad = np.einsum("...nj,njk,...nk->...n", gl, S, gl)
    work = np.einsum("...nj,nj->...n", gl, tensors.f_vec[:N])
    noise = np.einsum("...nj,nj->...n", gl, tensors.sigma_vec[:N])
    ito = np.sum(tensors.sigma_vec[:N] ** 2, axis=1)
    return (np.diff(E, axis=-1) + 2 * grad * dt - 2 * work * dt - 2 * noise * dW
            - ito * dt)


def weak_form_residual(traj: CoefficientTrajectory, tensors: TensorSeries):
    """Max over nodes and test functions ``w_j`` of the integrated coefficient
    equation, with left-point sums.  Zero up to round-off for this scheme."""
    g, dt = traj.g, traj.grid.dt
    N = traj.grid.N
    gl = g[:N]
    drift = (-np.einsum("njk,nk->nj", tensors.a_lin[:N], gl)
             - np.einsum("njkl,nk,nl->nj", tensors.a_tri[:N], gl, gl)
             + tensors.f_vec[:N])
    integ = np.cumsum(drift * dt + tensors.sigma_vec[:N] * traj.path.dW[:, None], axis=0)
    return float(np.max(np.abs(g[1:] - g[0] - integ)))


def reconstruct(problem: Problem, g_n, n, points, strict=True):
    """Physical velocity ``u_m(x, t_n)`` at physical ``points (..., 2)``.

    Returns ``(u, inside)``.  Points outside ``D(t_n)`` raise
    :class:`OutOfDomain` when ``strict``; otherwise they get NaN and
    ``inside = False``.
    """
    t = float(problem.grid.nodes[n])
    x = np.asarray(points, dtype=float)
    y = problem.dmap.forward(x, t)
    inside = reference_contains(y, tol=1e-12)
    if strict and not np.all(inside):
        raise OutOfDomain(f"{int(np.sum(~inside))} requested points lie outside D(t_{n})")
    yc = np.clip(y, 0.0, 1.0)
    snap = problem.basis.snapshot(n)
    w = snap.evaluate(yc)                     # (m, ..., 2)
    u_ref = np.tensordot(np.asarray(g_n, dtype=float), w, axes=(0, 0))
    Minv = np.linalg.inv(problem.dmap.jac_forward(x, t))
    u = np.einsum("...j,...jk->...k", u_ref, Minv)
    u[~inside] = np.nan
    return u, inside
