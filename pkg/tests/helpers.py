"""Cached problem/solution/estimator runs shared across test modules."""

from functools import lru_cache

import numpy as np

from aposteriori3d.fem import NEDELEC, build_space, element_quadrature
from aposteriori3d.schemes import solve
from aposteriori3d.workbench import StudyConfig, manufactured_problem, run_level


@lru_cache(maxsize=None)
def problem(case, n, A=None):
    return manufactured_problem(case, n, None if A is None else np.array(A))


@lru_cache(maxsize=None)
def solution(case, scheme, p, n, beta=10.0):
    return solve(problem(case, n), scheme, p, beta)


@lru_cache(maxsize=None)
def level(case, scheme, p, n, estimators):
    cfg = StudyConfig(case=case, n_list=[n], scheme=scheme, p=p, estimators=list(estimators))
    return run_level(cfg, n)


def curl_pairings(G, degree=1, constraint="N"):
    """(G, curl chi) for every free Nedelec basis function chi of the given degree,
    and the Cauchy-Schwarz scale sum_K ||G||_K ||curl chi||_K."""
    mesh = G.mesh
    ned = build_space(mesh, NEDELEC, degree, constraint)
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, G.space.degree + degree + 2)
    Gx = G.eval(elems, x)
    c = ned.eval(elems, x, "curl")
    loc = np.einsum("eq,eqi,eqbi->eb", w, Gx, c)
    sc = np.sqrt(np.einsum("eq,eqi,eqi->e", w, Gx, Gx))[:, None] * np.sqrt(np.einsum("eq,eqbi,eqbi->eb", w, c, c))
    vals, scale = np.zeros(ned.ndofs), np.zeros(ned.ndofs)
    np.add.at(vals, ned.elem_dofs, loc)
    np.add.at(scale, ned.elem_dofs, sc)
    return vals[ned.free], scale[ned.free]


def l2norm(field, degree=None):
    mesh = field.mesh
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, degree or 2 * field.space.degree + 2)
    v = field.eval(elems, x)
    v2 = v ** 2 if v.ndim == 2 else (v ** 2).sum(-1)
    return float(np.sqrt(np.einsum("eq,eq->", w, v2)))


def random_points_in_tets(mesh, n_points, rng):
    """(elems, x) with x of shape (n_points, 1, 3), one point per random tet."""
    elems = rng.integers(0, mesh.n_tets, n_points)
    lam = rng.dirichlet(np.ones(4), n_points)
    x = np.einsum("ea,eac->ec", lam, mesh.vertices[mesh.tets[elems]])
    return elems, x[:, None, :]
