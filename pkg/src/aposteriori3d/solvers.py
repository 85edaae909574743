"""Linear solvers: SPD systems, saddle points and small equality-constrained QPs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LIMIT = 3000
DEFAULT_TOL = 1e-12


class SolverError(RuntimeError):
    pass


class NotPositiveDefinite(SolverError):
    pass


class CompatibilityError(SolverError):
    """A local constrained problem has inconsistent constraints."""


@dataclass
class SolveInfo:
    method: str
    iterations: int
    residual: float
    extra: dict = field(default_factory=dict)


def _relres(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def pcg(A, b, tol: float = DEFAULT_TOL, maxiter: int | None = None, precond=None):
    """Conjugate gradients with a diagonal preconditioner.

    Raises NotPositiveDefinite on non-positive curvature.
    """
    n = len(b)
    maxiter = 10 * n if maxiter is None else maxiter
    if precond is None:
        d = np.asarray(A.diagonal()).copy()
        if np.any(d <= 0):
            raise NotPositiveDefinite("non-positive diagonal entry")
        precond = lambda r: r / d  # noqa: E731
    x = np.zeros(n)
    r = b.copy()
    nb = np.linalg.norm(b)
    if nb == 0:
        return x, 0
    z = precond(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0:
            raise NotPositiveDefinite(f"non-positive curvature at iteration {it}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * nb:
            return x, it
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG reached the iteration cap {maxiter} (residual {np.linalg.norm(r) / nb:.3e})")


def solve_spd(A, b, tol: float = DEFAULT_TOL, maxiter: int | None = None):
    """Solve an SPD system; dense Cholesky below DENSE_LIMIT unknowns, else PCG."""
    b = np.asarray(b, dtype=float)
    n = len(b)
    if n == 0:
        return np.zeros(0), SolveInfo("empty", 0, 0.0)
    if n < DENSE_LIMIT:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        try:
            c = la.cho_factor(dense)
        except la.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from exc
        x = la.cho_solve(c, b)
        return x, SolveInfo("cholesky", 1, _relres(dense, x, b))
    A = sp.csr_matrix(A)
    x, it = pcg(A, b, tol, maxiter)
    return x, SolveInfo("pcg", it, _relres(A, x, b))


def solve_saddle(M, B, f, g, tol: float = DEFAULT_TOL, maxiter: int | None = None):
    """Solve [[M, B^T], [B, 0]] [x; y] = [f; g] with M SPD.

    The multiplier is obtained from the Schur complement B M^-1 B^T, either
    formed densely (small problems) or applied inside CG.
    """
    M = sp.csc_matrix(M)
    B = sp.csr_matrix(B)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    lu = spla.splu(M)
    rhs = B @ lu.solve(f) - g
    m = B.shape[0]
    if m < DENSE_LIMIT:
        S = B @ lu.solve(B.T.toarray())
        S = 0.5 * (S + S.T)
        try:
            y = la.cho_solve(la.cho_factor(S), rhs)
        except la.LinAlgError as exc:
            raise NotPositiveDefinite(f"singular multiplier block: {exc}") from exc
        method, its = "schur-cholesky", 1
    else:
        op = spla.LinearOperator((m, m), matvec=lambda v: B @ lu.solve(B.T @ v))
        dM = M.diagonal()
        dS = np.asarray((B.multiply(B) @ (1.0 / dM))).ravel()
        y, its = pcg(op, rhs, tol, maxiter, precond=lambda r: r / dS)
        method = "schur-pcg"
    x = lu.solve(f - B.T @ y)
    full = np.linalg.norm(np.concatenate([M @ x + B.T @ y - f, B @ x - g]))
    scale = np.linalg.norm(np.concatenate([f, g]))
    res = full / scale if scale > 0 else full
    return x, y, SolveInfo(method, its, res)


# local equality-constrained quadratic programs ----------------------------------------

@dataclass
class EqpResult:
    x: np.ndarray
    rank: int
    nullspace_dim: int
    constraint_residual: float
    stationarity_residual: float
    objective: float


def solve_eqp(H, c, B, g, rank_tol: float = 1e-10, consistency_tol: float = 1e-9, label: str = "",
              scale: float = 0.0) -> EqpResult:
    """Minimise 1/2 x^T H x - c^T x subject to B x = g.

    Null-space method: a rank-revealing SVD of B gives a particular solution
    and a basis of ker B; dependent constraint rows (relative singular value
    below ``rank_tol``) are dropped.  Inconsistent constraints raise
    CompatibilityError; the residual is measured relative to max(|g|, scale),
    where ``scale`` is the size of the data g was computed from (so that
    roundoff-level right-hand sides are not judged against themselves).
    ``c`` and ``g`` may carry several right-hand sides
    as columns, in which case ``x`` has one column per problem.
    """
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    n = len(c)
    B = np.asarray(B, dtype=float).reshape(-1, n)
    g = np.asarray(g, dtype=float)
    if len(B):
        U, s, Vt = np.linalg.svd(B, full_matrices=True)
        r = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
        proj = U[:, :r].T @ g
        xp = Vt[:r].T @ (proj / (s[:r] if g.ndim == 1 else s[:r, None]))
        Z = Vt[r:].T
        gn = max(np.linalg.norm(g), scale)
        cres = np.linalg.norm(B @ xp - g)
        cres = cres / gn if gn > 0 else cres
        if cres > consistency_tol:
            raise CompatibilityError(f"{label}: inconsistent constraints (relative residual {cres:.3e})")
    else:
        r, xp, Z, cres = 0, np.zeros(c.shape), np.eye(n), 0.0
    if Z.shape[1]:
        Hz = Z.T @ H @ Z
        rhs = Z.T @ (c - H @ xp)
        try:
            y = la.cho_solve(la.cho_factor(Hz), rhs)
        except la.LinAlgError as exc:
            raise NotPositiveDefinite(f"{label}: reduced Hessian not positive definite") from exc
        x = xp + Z @ y
        grad = H @ x - c
        gs = np.linalg.norm(Z.T @ grad)
        scale = np.linalg.norm(Z.T @ c) + np.linalg.norm(Z.T @ (H @ xp)) + np.linalg.norm(H @ x)
        sres = gs / scale if scale > 0 else gs
    else:
        x, sres = xp, 0.0
    obj = float(np.sum(0.5 * x * (H @ x) - c * x))
    return EqpResult(x, r, Z.shape[1], cres, sres, obj)
