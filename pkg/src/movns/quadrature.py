"""Tensor-product Gauss-Legendre rules on the unit square."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MIN_ORDER = 8


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes ``(nq, 2)`` and weights ``(nq,)`` on ``(0, 1)^2``; ``order`` per axis."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray
    nodes_1d: np.ndarray
    weights_1d: np.ndarray

    @property
    def size(self):
        return len(self.weights)


@lru_cache(maxsize=32)
def gauss_legendre_square(order: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``order`` points per axis, exact for
    polynomials of degree ``2*order - 1`` in each variable."""
    if order < 1:
        raise ValueError("quadrature order must be positive")
    z, w = np.polynomial.legendre.leggauss(order)
    z = 0.5 * (z + 1.0)
    w = 0.5 * w
    Y1, Y2 = np.meshgrid(z, z, indexing="ij")
    nodes = np.stack([Y1.ravel(), Y2.ravel()], axis=-1)
    weights = np.outer(w, w).ravel()
    for a in (nodes, weights, z, w):
        a.setflags(write=False)
    return QuadratureRule(order, nodes, weights, z, w)


def recommended_order(m: int, floor: int = 24) -> int:
    """Order that integrates the trilinear integrand of the first ``m`` modes.

    The product of three basis fields contains frequencies up to ``6*p_max``
    per axis (``p_max`` the largest mode index), and the Gauss-Legendre rule
    resolves ``cos(k pi y)`` to ~1e-10 once ``order >~ 1.5 k``.
    """
    from .basis import mode_indices

    p_max = max(max(pq) for pq in mode_indices(m))
    return max(floor, math.ceil(1.25 * 6 * p_max) + 10)
