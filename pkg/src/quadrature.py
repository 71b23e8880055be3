# src/quadrature.py
"""Quadrature on the reference triangle {(0,0),(1,0),(0,1)}, edges and time intervals."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

# bilinear forms carry an extra factor x
MATRIX_EXTRA_DEGREE = 3
# right-hand sides and error norms with non-polynomial integrands
RHS_DEGREE = 12


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray    # (nq, dim) reference coordinates
    weights: np.ndarray   # (nq,)
    degree: int

    def __len__(self):
        return len(self.weights)


def gauss_interval(npts: int):
    """Gauss-Legendre points and weights on [0, 1]."""
    if npts < 1:
        raise ValueError("npts must be positive")
    x, w = leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1], exact to 2*npts-1 >= degree."""
    npts = max(1, (int(degree) + 2) // 2)
    x, w = gauss_interval(npts)
    return QuadratureRule(points=x[:, None], weights=w, degree=2 * npts - 1)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """
    Conical product rule: Gauss-Jacobi(1,0) in the collapsed direction times
    Gauss-Legendre. Exact for all polynomials of total degree <= `degree`.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    npts = max(1, (int(degree) + 2) // 2)
    s, ws = roots_jacobi(npts, 1.0, 0.0)
    u = 0.5 * (s + 1.0)
    wu = 0.25 * ws
    v, wv = gauss_interval(npts)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    points = np.column_stack([uu.ravel(), ((1.0 - uu) * vv).ravel()])
    weights = np.outer(wu, wv).ravel()
    return QuadratureRule(points=points, weights=weights, degree=2 * npts - 1)


def matrix_degree(p: int) -> int:
    return 2 * int(p) + MATRIX_EXTRA_DEGREE
