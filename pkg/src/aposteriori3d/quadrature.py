"""Collapsed-coordinate Gauss rules on the reference segment, triangle and tetrahedron."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,), sum = reference measure
    degree: int

    @property
    def size(self) -> int:
        return len(self.weights)


def _gauss_jacobi01(n: int, alpha: int):
    """n-point rule on [0, 1] for the weight (1 - t)^alpha."""
    x, w = roots_jacobi(n, alpha, 0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


def _npoints(degree: int) -> int:
    return max(1, (degree + 2) // 2)


@lru_cache(maxsize=None)
def line_rule(degree: int) -> QuadratureRule:
    t, w = _gauss_jacobi01(_npoints(degree), 0)
    return QuadratureRule(t[:, None], w, degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Rule on {s, t >= 0, s + t <= 1}; weights sum to 1/2."""
    n = _npoints(degree)
    a, wa = _gauss_jacobi01(n, 1)
    b, wb = _gauss_jacobi01(n, 0)
    A, B = np.meshgrid(a, b, indexing="ij")
    s = A.ravel()
    t = (B * (1.0 - A)).ravel()
    w = np.outer(wa, wb).ravel()
    return QuadratureRule(np.stack([s, t], axis=1), w, degree)


@lru_cache(maxsize=None)
def tet_rule(degree: int) -> QuadratureRule:
    """Rule on the unit reference tetrahedron; weights sum to 1/6."""
    n = _npoints(degree)
    a, wa = _gauss_jacobi01(n, 2)
    b, wb = _gauss_jacobi01(n, 1)
    c, wc = _gauss_jacobi01(n, 0)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    x = A
    y = B * (1.0 - A)
    z = C * (1.0 - A) * (1.0 - B)
    w = np.einsum("i,j,k->ijk", wa, wb, wc)
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    return QuadratureRule(pts, w.ravel(), degree)


def default_degree(max_poly_degree: int) -> int:
    return 2 * max_poly_degree + 2


DATA_DEGREE = 10
