"""Monomial coefficient calculus in three variables.

Polynomials are stored as coefficient arrays whose last axis runs over the
monomials of total degree <= D (graded order).  Vector polynomials carry a
component axis just before it.  Everything is expressed in the scaled local
variable xi = (x - c_K) / h_K of an element, so derivatives in x pick up a
factor 1 / h_K that callers apply.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.linalg


@lru_cache(maxsize=None)
def exponents(degree: int, dim: int = 3) -> np.ndarray:
    """Exponent tuples of all monomials with total degree <= degree, graded."""
    out = []
    for d in range(degree + 1):
        if dim == 3:
            for a in range(d, -1, -1):
                for b in range(d - a, -1, -1):
                    out.append((a, b, d - a - b))
        else:
            for a in range(d, -1, -1):
                out.append((a, d - a))
    arr = np.array(out, dtype=np.int64).reshape(-1, dim)
    arr.flags.writeable = False
    return arr


def count(degree: int, dim: int = 3) -> int:
    if degree < 0:
        return 0
    return len(exponents(degree, dim))


@lru_cache(maxsize=None)
def _index(degree: int, dim: int = 3) -> dict:
    return {tuple(e): i for i, e in enumerate(exponents(degree, dim).tolist())}


def monomials(points: np.ndarray, degree: int) -> np.ndarray:
    """Values of every monomial at ``points`` (..., dim) -> (..., nm)."""
    dim = points.shape[-1]
    exps = exponents(degree, dim)
    pw = points[..., None, :] ** np.arange(degree + 1)[:, None]  # (..., degree+1, dim)
    out = pw[..., exps[:, 0], 0]
    for d in range(1, dim):
        out = out * pw[..., exps[:, d], d]
    return out


@lru_cache(maxsize=None)
def derivative_matrix(degree: int, axis: int) -> np.ndarray:
    """D with (coef @ D.T) the coefficients of the derivative along ``axis``."""
    exps = exponents(degree)
    idx = _index(degree)
    n = len(exps)
    mat = np.zeros((n, n))
    for j, e in enumerate(exps.tolist()):
        if e[axis] > 0:
            f = list(e)
            f[axis] -= 1
            mat[idx[tuple(f)], j] = e[axis]
    mat.flags.writeable = False
    return mat


@lru_cache(maxsize=None)
def multiply_matrix(degree: int, axis: int) -> np.ndarray:
    """X mapping coefficients (deg <= degree-1) times xi_axis into deg <= degree."""
    small = exponents(degree - 1)
    idx = _index(degree)
    mat = np.zeros((count(degree), len(small)))
    for j, e in enumerate(small.tolist()):
        f = list(e)
        f[axis] += 1
        mat[idx[tuple(f)], j] = 1.0
    return mat


def pad(coef: np.ndarray, degree: int) -> np.ndarray:
    """Embed coefficients into the monomial set of a higher degree."""
    n = count(degree)
    if coef.shape[-1] == n:
        return coef
    out = np.zeros(coef.shape[:-1] + (n,))
    out[..., : coef.shape[-1]] = coef
    return out


def derivative(coef: np.ndarray, axis: int, degree: int) -> np.ndarray:
    return coef @ derivative_matrix(degree, axis).T


def gradient(coef: np.ndarray, degree: int) -> np.ndarray:
    """Scalar (..., nm) -> vector (..., 3, nm)."""
    return np.stack([derivative(coef, i, degree) for i in range(3)], axis=-2)


def jacobian(coef: np.ndarray, degree: int) -> np.ndarray:
    """Vector (..., 3, nm) -> (..., 3, 3, nm) with [c, i] = d v_c / d xi_i."""
    return np.stack([derivative(coef, i, degree) for i in range(3)], axis=-2)


def divergence(coef: np.ndarray, degree: int) -> np.ndarray:
    return sum(derivative(coef[..., i, :], i, degree) for i in range(3))


def curl(coef: np.ndarray, degree: int) -> np.ndarray:
    d = lambda c, i: derivative(coef[..., c, :], i, degree)  # noqa: E731
    return np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)], axis=-2)


# raw local bases -------------------------------------------------------

def scalar_basis(degree: int) -> np.ndarray:
    """Monomial basis of P_degree as (nb, 1, nm)."""
    return np.eye(count(degree))[:, None, :]


def vector_basis(degree: int) -> np.ndarray:
    """Basis of P_degree^3 as (3 nm, 3, nm), component-major."""
    n = count(degree)
    out = np.zeros((3, n, 3, n))
    for c in range(3):
        out[c, :, c, :] = np.eye(n)
    return out.reshape(3 * n, 3, n)


def _homogeneous(degree: int) -> np.ndarray:
    return np.arange(count(degree - 1), count(degree))


@lru_cache(maxsize=None)
def raviart_thomas_basis(k: int) -> np.ndarray:
    """P_{k-1}^3 + xi P_{k-1}, built from P_{k-1}^3 and xi times homogeneous terms."""
    base = pad(vector_basis(k - 1), k)
    extra = []
    for j in _homogeneous(k - 1):
        m = np.zeros(count(k - 1))
        m[j] = 1.0
        extra.append(np.stack([multiply_matrix(k, c) @ m for c in range(3)]))
    out = np.concatenate([base, np.array(extra)], axis=0)
    assert len(out) == k * (k + 1) * (k + 3) // 2
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def nedelec_basis(k: int) -> np.ndarray:
    """P_{k-1}^3 + xi x P_{k-1}^3 with a rank-revealing pick of the cross terms."""
    base = pad(vector_basis(k - 1), k)
    cand = []
    for j in _homogeneous(k - 1):
        m = np.zeros(count(k - 1))
        m[j] = 1.0
        X = [multiply_matrix(k, c) @ m for c in range(3)]
        for c in range(3):
            # xi x (e_c m)
            e = np.zeros((3, count(k)))
            if c == 0:
                e[1], e[2] = X[2], -X[1]
            elif c == 1:
                e[0], e[2] = -X[2], X[0]
            else:
                e[0], e[1] = X[1], -X[0]
            cand.append(e)
    cand = np.array(cand)
    need = k * (k + 2)
    _, _, piv = scipy.linalg.qr(cand.reshape(len(cand), -1).T, pivoting=True)
    extra = cand[np.sort(piv[:need])]
    out = np.concatenate([base, extra], axis=0)
    assert len(out) == k * (k + 2) * (k + 3) // 2
    out.flags.writeable = False
    return out
