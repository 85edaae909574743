"""Model problem and the three discretisations: conforming, IPDG and mixed RT."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import fem
from .assembly import assemble, discrete_gradient, ipdg_matrices, lifting
from .fem import BROKEN_SCALAR, BROKEN_VECTOR, LAGRANGE, RAVIART_THOMAS, Coefficient, Field
from .mesh import DIRICHLET, Mesh
from .solvers import DEFAULT_TOL, NotPositiveDefinite, SolveInfo, solve_saddle, solve_spd

ScalarFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class Problem:
    """-div(A grad u) = f, u = 0 on the Dirichlet faces, A grad u . n = 0 on the Neumann faces."""

    mesh: Mesh
    coefficient: Coefficient
    f: ScalarFn
    u: ScalarFn | None = None
    grad_u: ScalarFn | None = None
    name: str = "custom"

    def __post_init__(self):
        if not np.any(self.mesh.face_label == DIRICHLET):
            raise ValueError("problem needs at least one Dirichlet face")

    @property
    def has_exact(self) -> bool:
        return self.u is not None and self.grad_u is not None

    def scaled(self, c: float) -> "Problem":
        """Same problem with load and exact solution multiplied by c."""
        f, u, g = self.f, self.u, self.grad_u
        return Problem(self.mesh, self.coefficient, lambda x: c * f(x),
                       None if u is None else (lambda x: c * u(x)),
                       None if g is None else (lambda x: c * g(x)), self.name)


@dataclass
class SchemeOutput:
    scheme: str
    degree: int
    primary: Field
    aux: dict = field(default_factory=dict)
    info: SolveInfo | None = None

    @property
    def gradient(self) -> Field:
        """Discrete gradient in both schemes: G_h(u_h) for IPDG, -A^-1 sigma_h for mixed,
        grad u_h for the conforming method."""
        return self.aux["discrete_gradient"]


def _check_residual(info: SolveInfo, tol: float) -> None:
    if info.residual > max(tol, 1e-10):
        raise RuntimeError(f"linear solve residual {info.residual:.3e} above tolerance")


def solve_conforming(problem: Problem, p: int, tol: float = DEFAULT_TOL) -> SchemeOutput:
    space = fem.build_space(problem.mesh, LAGRANGE, p, "D")
    K = assemble("stiffness", space, coefficient=problem.coefficient)
    b = assemble("load", space, f=problem.f)
    free = space.free
    x, info = solve_spd(K[free][:, free], b[free], tol)
    _check_residual(info, tol)
    u = np.zeros(space.ndofs)
    u[free] = x
    uh = Field(space, u)
    grad = _gradient_as_broken(uh)
    return SchemeOutput("conforming", p, uh, {"discrete_gradient": grad}, info)


def _gradient_as_broken(uh: Field) -> Field:
    """Elementwise gradient of a Lagrange field, stored in the broken vector space."""
    mesh = uh.mesh
    vec = fem.build_space(mesh, BROKEN_VECTOR, uh.space.degree - 1)
    elems = np.arange(mesh.n_tets)
    x, w = fem.element_quadrature(mesh, elems, 2 * uh.space.degree + 2)
    c = np.einsum("eq,eqbc,eqc->eb", w, vec.eval(elems, x), uh.eval(elems, x, "grad"))
    return Field(vec, c.ravel())


def ipdg_operator(mesh: Mesh, coefficient: Coefficient, p: int, beta: float):
    space = fem.build_space(mesh, BROKEN_SCALAR, p)
    vol, cons, pen = ipdg_matrices(space, coefficient, beta)
    return space, vol + cons + pen, (vol, cons, pen)


def solve_ipdg(problem: Problem, p: int, beta: float = 10.0, lifting_degree: int | None = None,
               tol: float = DEFAULT_TOL) -> SchemeOutput:
    """Symmetric interior penalty DG with penalty beta alpha_max p^2 / h_F."""
    if p not in (1, 2):
        raise ValueError("IPDG supports p in {1, 2}")
    if beta <= 0:
        raise ValueError("penalty beta must be positive")
    if lifting_degree not in (None, 0, p - 1):
        raise ValueError("lifting degree must be p-1 or 0")
    space, A, parts = ipdg_operator(problem.mesh, problem.coefficient, p, beta)
    b = assemble("load", space, f=problem.f)
    try:
        x, info = solve_spd(A, b, tol)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"IPDG matrix is not positive definite for beta={beta}; "
                                  f"increase the penalty ({exc})") from exc
    _check_residual(info, tol)
    uh = Field(space, x)
    aux = {
        "lifting": lifting(uh, lifting_degree),
        "discrete_gradient": discrete_gradient(uh, lifting_degree),
        "beta": beta,
        "lifting_degree": p - 1 if lifting_degree is None else lifting_degree,
    }
    return SchemeOutput("ipdg", p, uh, aux, info)


def solve_mixed(problem: Problem, p: int, tol: float = DEFAULT_TOL) -> SchemeOutput:
    """RT_p x P_{p-1} mixed method for the flux sigma = -A grad u."""
    if p not in (1, 2):
        raise ValueError("mixed scheme supports p in {1, 2}")
    mesh = problem.mesh
    rt = fem.build_space(mesh, RAVIART_THOMAS, p, "N")
    ps = fem.build_space(mesh, BROKEN_SCALAR, p - 1)
    M = assemble("weightedmass", rt, coefficient=problem.coefficient, weight="Ainv")
    B = assemble("div-pairing", rt, ps)
    g = assemble("load", ps, f=problem.f)
    free = rt.free
    s, r, info = solve_saddle(M[free][:, free], B[:, free], np.zeros(len(free)), g, tol)
    _check_residual(info, tol)
    sigma = np.zeros(rt.ndofs)
    sigma[free] = s
    sig = Field(rt, sigma)
    aux = {"multiplier": Field(ps, -r), "discrete_gradient": flux_to_gradient(sig, problem.coefficient)}
    return SchemeOutput("mixed", p, sig, aux, info)


def flux_to_gradient(sigma: Field, coefficient: Coefficient) -> Field:
    """-A^-1 sigma, exact in the broken vector space of the same degree."""
    mesh = sigma.mesh
    vec = fem.build_space(mesh, BROKEN_VECTOR, sigma.space.degree)
    elems = np.arange(mesh.n_tets)
    x, w = fem.element_quadrature(mesh, elems, 2 * sigma.space.degree + 2)
    g = -np.einsum("eij,eqj->eqi", coefficient.Ainv, sigma.eval(elems, x))
    c = np.einsum("eq,eqbc,eqc->eb", w, vec.eval(elems, x), g)
    return Field(vec, c.ravel())


def solve(problem: Problem, scheme: str, p: int, beta: float = 10.0, lifting_degree: int | None = None) -> SchemeOutput:
    if scheme == "conforming":
        return solve_conforming(problem, p)
    if scheme == "ipdg":
        return solve_ipdg(problem, p, beta, lifting_degree)
    if scheme == "mixed":
        return solve_mixed(problem, p)
    raise ValueError(f"unknown scheme {scheme!r}")


def galerkin_residual(problem: Problem, grad: Field, degree: int = 1) -> float:
    """max |(A G, grad v) - (f, v)| over conforming Lagrange basis functions v
    vanishing on the Dirichlet boundary, relative to the load vector size."""
    space = fem.build_space(problem.mesh, LAGRANGE, degree, "D")
    mesh = problem.mesh
    b = assemble("load", space, f=problem.f)
    lhs = np.zeros(space.ndofs)
    elems = np.arange(mesh.n_tets)
    x, w = fem.element_quadrature(mesh, elems, grad.space.degree + degree + 2)
    AG = np.einsum("eij,eqj->eqi", problem.coefficient.A, grad.eval(elems, x))
    loc = np.einsum("eq,eqi,eqbi->eb", w, AG, space.eval(elems, x, "grad"))
    np.add.at(lhs, space.elem_dofs, loc)
    r = (lhs - b)[space.free]
    scale = max(np.abs(b[space.free]).max(initial=0.0), np.abs(lhs[space.free]).max(initial=0.0), 1e-300)
    return float(np.abs(r).max(initial=0.0) / scale) if np.any(lhs) or np.any(b) else 0.0


def a_h_identity_residual(problem: Problem, p: int, beta: float, v: np.ndarray) -> float:
    """|a_h(v,v) - (A G v, G v) - s_h(v,v)| / a_h(v,v) for the lifted form."""
    space, A, _ = ipdg_operator(problem.mesh, problem.coefficient, p, beta)
    _, _, pen = ipdg_matrices(space, problem.coefficient, beta)
    vh = Field(space, v)
    G = discrete_gradient(vh)
    L = lifting(vh)
    mesh = problem.mesh
    elems = np.arange(mesh.n_tets)
    x, w = fem.element_quadrature(mesh, elems, 2 * p)
    Gx, Lx = G.eval(elems, x), L.eval(elems, x)
    AA = problem.coefficient.A
    aGG = np.einsum("eq,eqi,eij,eqj->", w, Gx, AA, Gx)
    aLL = np.einsum("eq,eqi,eij,eqj->", w, Lx, AA, Lx)
    ah = v @ (A @ v)
    sh = v @ (pen @ v) - aLL
    return abs(ah - aGG - sh) / abs(ah)


__all__ = ["Problem", "SchemeOutput", "solve_conforming", "solve_ipdg", "solve_mixed", "solve",
           "galerkin_residual", "flux_to_gradient", "ipdg_operator", "a_h_identity_residual"]
