"""Divergence-free stream-function basis and its moving orthonormalization.

Raw elements come from a product stream function ``psi_pq = A_p(y1) A_q(y2)``
through ``e = (d psi / dy2, -d psi / dy1)``.  Two 1D families are offered:

* ``sin2``: ``A_p(z) = sin^2(p pi z)`` (the default);
* ``sinprod``: ``A_p(z) = sin(pi z) sin(p pi z)``.

Both vanish with their first derivative at ``z = 0, 1``.  Every ``sin2``
profile is even about ``z = 1/2``, so that span only holds fields with the
mirror symmetry of the square, and the convective term vanishes on it
identically.  ``sinprod`` has profiles of both parities.

Raw elements are fixed in time; only the Gram-Schmidt coefficients
``R(s)`` move with the metric, so ``w_j(s) = sum_a R[j, a](s) e_a`` and
``w_j' = sum_a R'[j, a](s) e_a``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np

from . import _kernels
from .errors import DegenerateBasis
from .geometry import metric_at
from .quadrature import QuadratureRule

DEGENERACY_TOL = 1e-12
REORTH_TOL = 1e-12
CACHE_MAGIC = b"MOVNSBS1"
CACHE_VERSION = 2


def mode_indices(m):
    """First ``m`` index pairs ``(p, q)`` ordered by ``p + q``, then ``p``."""
    if m < 1:
        raise ValueError("need at least one mode")
    out = []
    total = 2
    while len(out) < m:
        for p in range(1, total):
            out.append((p, total - p))
            if len(out) == m:
                break
        total += 1
    return out


FAMILIES = ("sin2", "sinprod")


def _factors(p, z, family="sin2"):
    """1D profile of index ``p`` and its first three derivatives."""
    if family == "sin2":
        w = p * np.pi
        s2, c2 = np.sin(2 * w * z), np.cos(2 * w * z)
        return (np.sin(w * z) ** 2, w * s2, 2 * w * w * c2, -4 * w ** 3 * s2)
    if family == "sinprod":
        # sin(pi z) sin(p pi z) = (cos(a z) - cos(b z)) / 2
        a, b = (p - 1) * np.pi, (p + 1) * np.pi
        ca, cb, sa, sb = np.cos(a * z), np.cos(b * z), np.sin(a * z), np.sin(b * z)
        return (0.5 * (ca - cb), 0.5 * (b * sb - a * sa),
                0.5 * (b * b * cb - a * a * ca), 0.5 * (a ** 3 * sa - b ** 3 * sb))
    raise ValueError(f"unknown basis family {family!r}")


def _field_parts(p, q, y, family="sin2"):
    y = np.asarray(y, dtype=float)
    A, A1, A2, A3 = _factors(p, y[..., 0], family)
    B, B1, B2, B3 = _factors(q, y[..., 1], family)
    e = np.stack([A * B1, -A1 * B], axis=-1)
    de = np.empty(y.shape[:-1] + (2, 2))
    de[..., 0, 0], de[..., 0, 1] = A1 * B1, A * B2
    de[..., 1, 0], de[..., 1, 1] = -A2 * B, -A1 * B1
    dde = np.empty(y.shape[:-1] + (2, 2, 2))
    dde[..., 0, 0, 0] = A2 * B1
    dde[..., 0, 0, 1] = dde[..., 0, 1, 0] = A1 * B2
    dde[..., 0, 1, 1] = A * B3
    dde[..., 1, 0, 0] = -A3 * B
    dde[..., 1, 0, 1] = dde[..., 1, 1, 0] = -A2 * B1
    dde[..., 1, 1, 1] = -A1 * B2
    return e, de, dde


@dataclass(frozen=True)
class StreamElement:
    """Raw element for the index pair ``(p, q)``.

    ``grad`` returns ``G[..., i, k] = d e^i / d y^k`` and ``hess`` returns
    ``H[..., i, j, k] = d^2 e^i / d y^j d y^k``.
    """

    p: int
    q: int
    family: str = "sin2"

    def psi(self, y):
        y = np.asarray(y, dtype=float)
        return (_factors(self.p, y[..., 0], self.family)[0]
                * _factors(self.q, y[..., 1], self.family)[0])

    def field(self, y):
        return _field_parts(self.p, self.q, y, self.family)[0]

    def grad(self, y):
        return _field_parts(self.p, self.q, y, self.family)[1]

    def hess(self, y):
        return _field_parts(self.p, self.q, y, self.family)[2]

    # alias matching the usual name of the field
    e_tilde = field


def raw_stream_basis(m, family="sin2"):
    if family not in FAMILIES:
        raise ValueError(f"unknown basis family {family!r}")
    return [StreamElement(p, q, family) for p, q in mode_indices(m)]


@dataclass(frozen=True, eq=False)
class RawTable:
    """Raw elements sampled on a quadrature rule.

    ``E (m, nq, 2)``, ``dE (m, nq, 2, 2)``, ``ddE (m, nq, 2, 2, 2)``.
    """

    modes: tuple
    quad: QuadratureRule
    E: np.ndarray
    dE: np.ndarray
    ddE: np.ndarray
    family: str = "sin2"

    @property
    def m(self):
        return len(self.modes)


@lru_cache(maxsize=16)
def _raw_table_cached(modes, family, quad):
    parts = [_field_parts(p, q, quad.nodes, family) for p, q in modes]
    E, dE, ddE = (np.stack([pt[i] for pt in parts]) for i in range(3))
    for a in (E, dE, ddE):
        a.setflags(write=False)
    return RawTable(modes, quad, E, dE, ddE, family)


def raw_table(raw, quad, family="sin2"):
    """Sample a list of ``StreamElement`` (or a mode count) on ``quad``."""
    if isinstance(raw, int):
        raw = raw_stream_basis(raw, family)
    families = {e.family for e in raw}
    if len(families) != 1:
        raise ValueError("raw elements must come from a single family")
    return _raw_table_cached(tuple((e.p, e.q) for e in raw), families.pop(), quad)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform nodes ``0 = t_0 < ... < t_N = T``."""

    T: float
    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("a time grid needs N >= 2 steps")
        if not self.T > 0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self):
        return self.T / self.N

    @property
    def nodes(self):
        return np.linspace(0.0, self.T, self.N + 1)

    def refine(self, factor=2):
        return TimeGrid(self.T, self.N * factor)


# ---------------------------------------------------------------------------
# Gram matrices and Gram-Schmidt

def gram_matrix(table, metric, quad=None):
    """Raw Gram matrix ``<e_a, e_b>_s`` from metric samples at the nodes."""
    quad = quad or table.quad
    wJ = quad.weights * np.broadcast_to(metric.J, quad.weights.shape)
    hE = np.einsum("qij,bqj->bqi", np.broadcast_to(metric.h_down, (quad.size, 2, 2)), table.E)
    return np.einsum("aqi,bqi,q->ab", table.E, hE, wJ)


def gram_schmidt(G, tol=DEGENERACY_TOL, reorth_tol=REORTH_TOL):
    """Coefficients ``R`` (lower triangular, positive diagonal) with
    ``R G R^T = I``.

    Raises
    ------
    DegenerateBasis
        when a squared pivot falls below ``tol * G_jj``.
    """
    G = np.asarray(G, dtype=float)
    R, j_fail, _ = _kernels.mgs(G, reorth_tol)
    if j_fail >= 0:
        raise DegenerateBasis(f"non-positive pivot at mode {j_fail + 1}")
    # squared pivot of row j relative to G_jj equals 1 / (R_jj^2 G_jj)
    rel = 1.0 / (np.diag(R) ** 2 * np.diag(G))
    if np.any(rel <= tol):
        j = int(np.argmin(rel))
        raise DegenerateBasis(f"pivot at mode {j + 1} is {rel[j]:.2e} of its diagonal "
                              f"(threshold {tol:g})")
    return R


@dataclass(frozen=True)
class BasisSnapshot:
    """Orthonormal basis at one time node.

    Fields are produced lazily from the raw table and ``R``; ``Rdot`` is
    ``None`` until a time derivative has been attached.
    """

    s: float
    R: np.ndarray
    table: RawTable
    Rdot: Optional[np.ndarray] = None

    @property
    def m(self):
        return self.R.shape[0]

    @property
    def quad(self):
        return self.table.quad

    @cached_property
    def values(self):
        return np.einsum("ja,aqi->jqi", self.R, self.table.E)

    @cached_property
    def grads(self):
        return np.einsum("na,aqik->nqik", self.R, self.table.dE)

    @cached_property
    def hessians(self):
        return np.einsum("na,aqijk->nqijk", self.R, self.table.ddE)

    @cached_property
    def time_derivative(self):
        if self.Rdot is None:
            raise ValueError("snapshot has no time derivative attached")
        return np.einsum("ja,aqi->jqi", self.Rdot, self.table.E)

    def with_derivative(self, Rdot):
        return BasisSnapshot(self.s, self.R, self.table, np.asarray(Rdot, dtype=float))

    def covariant_grads(self, metric):
        """``C[j, q, i, k] = nabla_k w_j^i`` using the Christoffel symbols."""
        Phi = np.broadcast_to(metric.Phi, (self.quad.size, 2, 2, 2))
        return self.grads + np.einsum("qikl,jql->jqik", Phi, self.values)

    def evaluate(self, y):
        """Orthonormal fields at arbitrary reference points, ``(m, ..., 2)``."""
        raw = np.stack([_field_parts(p, q, y, self.table.family)[0]
                        for p, q in self.table.modes])
        return np.tensordot(self.R, raw, axes=(1, 0))


def orthonormalize(raw, dmap, s, quad, tol=DEGENERACY_TOL) -> BasisSnapshot:
    """Gram-Schmidt of the raw elements under the weighted inner product at ``s``."""
    table = raw_table(raw, quad)
    metric = metric_at(dmap, quad.nodes, s)
    return BasisSnapshot(float(s), gram_schmidt(gram_matrix(table, metric), tol), table)


# ---------------------------------------------------------------------------
# series over a time grid

def basis_time_derivative(R, dt):
    """Second-order differences of ``R`` along axis 0 (needs >= 3 nodes)."""
    R = np.asarray(R, dtype=float)
    if R.shape[0] < 3:
        raise ValueError("need at least three time nodes")
    Rdot = np.empty_like(R)
    Rdot[1:-1] = (R[2:] - R[:-2]) / (2 * dt)
    Rdot[0] = (-3 * R[0] + 4 * R[1] - R[2]) / (2 * dt)
    Rdot[-1] = (3 * R[-1] - 4 * R[-2] + R[-3]) / (2 * dt)
    return Rdot


@dataclass(frozen=True)
class BasisSeries:
    """``R`` and ``R'`` on every node of a time grid."""

    grid: TimeGrid
    table: RawTable
    R: np.ndarray
    Rdot: np.ndarray
    grams: np.ndarray = field(repr=False)

    @property
    def m(self):
        return self.R.shape[1]

    def snapshot(self, n):
        return BasisSnapshot(float(self.grid.nodes[n]), self.R[n], self.table, self.Rdot[n])

    def truncate(self, m):
        if m > self.m:
            raise ValueError(f"cannot truncate {self.m} modes to {m}")
        sub = raw_table(m, self.table.quad, self.table.family)
        return BasisSeries(self.grid, sub, self.R[:, :m, :m], self.Rdot[:, :m, :m],
                           self.grams[:, :m, :m])

    def gram_deviation(self):
        """``max |R G R^T - I|`` over all nodes."""
        I = np.eye(self.m)
        dev = np.einsum("nja,nab,nkb->njk", self.R, self.grams, self.R) - I
        return float(np.max(np.abs(dev)))

    def max_step(self):
        """Largest ``|R(t_{n+1}) - R(t_n)|`` (no sign flips means O(dt))."""
        return float(np.max(np.abs(np.diff(self.R, axis=0))))


def gram_series(dmap, table, grid):
    """Raw Gram matrices at every node; affine maps use precomputed moments."""
    s_nodes = grid.nodes
    if dmap.affine:
        from .assembly import raw_moments
        P = raw_moments(table).P          # (2, 2, m, m)
        out = np.empty((len(s_nodes), table.m, table.m))
        c = np.zeros(2)
        for n, s in enumerate(s_nodes):
            g = metric_at(dmap, c + 0.5, s)
            out[n] = g.J * np.einsum("ij,ijab->ab", g.h_down, P)
        return out
    return np.stack([gram_matrix(table, metric_at(dmap, table.quad.nodes, s))
                     for s in s_nodes])


def build_basis_series(dmap, m, grid, quad, tol=DEGENERACY_TOL,
                       family="sin2") -> BasisSeries:
    table = raw_table(m, quad, family)
    grams = gram_series(dmap, table, grid)
    R = np.stack([gram_schmidt(G, tol) for G in grams])
    return BasisSeries(grid, table, R, basis_time_derivative(R, grid.dt), grams)


def antisymmetry_residual(snapshot, dmap, s=None):
    """Matrix ``<w_i' + G w_i, w_j> + <w_j' + G w_j, w_i>``; exactly zero in theory."""
    from .assembly import covariant_apply, weighted_inner

    s = snapshot.s if s is None else s
    metric = metric_at(dmap, snapshot.quad.nodes, s)
    ops = covariant_apply(snapshot, metric)
    B = weighted_inner(snapshot.time_derivative + ops.G, snapshot.values, metric,
                       snapshot.quad)
    # B[k, j] = <w_k' + G w_k, w_j>
    return B + B.T


# ---------------------------------------------------------------------------
# flat binary cache

def save_series(path, series: BasisSeries):
    """Write ``R`` and ``R'`` with a versioned header for reuse across runs."""
    m, n_nodes = series.m, series.grid.N + 1
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IIIIId", CACHE_VERSION, m, n_nodes,
                             series.table.quad.order,
                             FAMILIES.index(series.table.family), series.grid.T))
        fh.write(np.ascontiguousarray(series.R, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(series.Rdot, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(series.grams, dtype="<f8").tobytes())


def load_series(path, quad=None) -> BasisSeries:
    from .quadrature import gauss_legendre_square

    with open(path, "rb") as fh:
        if fh.read(len(CACHE_MAGIC)) != CACHE_MAGIC:
            raise ValueError(f"{path}: not a basis cache file")
        version, m, n_nodes, order, fam, T = struct.unpack("<IIIIId", fh.read(28))
        if version != CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        count = n_nodes * m * m
        arrs = [np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(n_nodes, m, m)
                for _ in range(3)]
    quad = quad or gauss_legendre_square(order)
    if quad.order != order:
        raise ValueError(f"{path}: cached for quadrature order {order}, not {quad.order}")
    return BasisSeries(TimeGrid(T, n_nodes - 1), raw_table(m, quad, FAMILIES[fam]),
                       arrs[0].copy(), arrs[1].copy(), arrs[2].copy())
