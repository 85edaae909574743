"""Residual-based estimators for IPDG and mixed discretisations, and the
standard IPDG estimator used for comparison."""

from __future__ import annotations

import numpy as np

from . import fem
from .fem import Field, element_quadrature, face_trace
from .mesh import DIRICHLET, NEUMANN, Mesh
from .quadrature import DATA_DEGREE
from .report import EstimatorReport
from .schemes import Problem, SchemeOutput

# alpha bounds are taken over the twice-extended patch of omega_K, i.e. three
# vertex layers around K, truncated at the domain boundary
ALPHA_LEVELS = 3


class _Mapped:
    """A broken vector field multiplied elementwise by a constant matrix."""

    def __init__(self, field: Field, mats: np.ndarray):
        self.field, self.mats, self.mesh = field, mats, field.mesh

    def eval(self, elems, x, op="value"):
        return np.einsum("eij,eqj->eqi", self.mats[np.asarray(elems)], self.field.eval(elems, x))


def face_norms2(field, faces, kind: str, degree: int) -> np.ndarray:
    """Squared L2 norm of the jump (one-sided trace on boundary faces)."""
    tr = face_trace(field, faces, kind, degree)
    j = tr.jump
    j2 = j ** 2 if j.ndim == 2 else (j ** 2).sum(-1)
    return np.einsum("fq,fq->f", tr.w, j2)


def _faces_to_elements(mesh: Mesh, face_values: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Add each face value to every tet containing the face."""
    out = np.zeros(mesh.n_tets)
    for side in (0, 1):
        t = mesh.face_tets[faces, side]
        ok = t >= 0
        np.add.at(out, t[ok], face_values[ok])
    return out


def _faces_except(mesh: Mesh, label: int) -> np.ndarray:
    """Faces of the set (interior + boundary) minus the boundary part ``label``."""
    return np.flatnonzero(mesh.face_label != label)


def _volume_terms(problem: Problem, grad: Field):
    """Elementwise ||div(A G) + f||^2 and ||curl G||^2."""
    mesh = problem.mesh
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, DATA_DEGREE)
    A = problem.coefficient.A
    if grad.space.degree >= 1:
        J = grad.eval(elems, x, "grad")  # [c, i] = d G_c / d x_i
        div = np.einsum("ecj,eqjc->eq", A, J)
        curl = grad.eval(elems, x, "curl")
    else:
        div = np.zeros(w.shape)
        curl = np.zeros(w.shape + (3,))
    r = div + np.asarray(problem.f(x), dtype=float)
    return np.einsum("eq,eq->e", w, r ** 2), np.einsum("eq,eqi->e", w, curl ** 2)


def _oscillation(problem: Problem, q: int) -> np.ndarray:
    """||f - Pi_{hq} f||_K^2 per element."""
    mesh = problem.mesh
    proj = fem.project_broken(mesh, q, problem.f)
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, DATA_DEGREE)
    d = np.asarray(problem.f(x), dtype=float) - proj.eval(elems, x)
    return np.einsum("eq,eq->e", w, d ** 2)


def estimate_residual_ipdg(problem: Problem, output: SchemeOutput) -> EstimatorReport:
    if output.scheme != "ipdg":
        raise ValueError("expected an IPDG solution")
    mesh, coef = problem.mesh, problem.coefficient
    p = output.degree
    G = output.gradient
    h = mesh.diameters
    amin, amax = coef.patch_min(ALPHA_LEVELS), coef.patch_max(ALPHA_LEVELS)
    qd = 2 * G.space.degree + 2
    div2, curl2 = _volume_terms(problem, G)
    nf = _faces_except(mesh, DIRICHLET)
    tf = _faces_except(mesh, NEUMANN)
    normal2 = _faces_to_elements(mesh, face_norms2(_Mapped(G, coef.A), nf, "normal", qd), nf)
    tang2 = _faces_to_elements(mesh, face_norms2(G, tf, "tangential", qd), tf)
    terms = {
        "div_residual": (h / p) ** 2 * div2 / amin,
        "normal_jump": (h / p) * normal2 / amin,
        "curl": amax * (h / p) ** 2 * curl2,
        "tangential_jump": amax * (h / p) * tang2,
    }
    return EstimatorReport("residual", "ipdg", p, terms, metadata={"alpha_levels": ALPHA_LEVELS})


def estimate_residual_mixed(problem: Problem, output: SchemeOutput) -> EstimatorReport:
    if output.scheme != "mixed":
        raise ValueError("expected a mixed solution")
    mesh, coef = problem.mesh, problem.coefficient
    p = output.degree
    G = output.gradient  # -A^-1 sigma_h
    h = mesh.diameters
    amax = coef.patch_max(ALPHA_LEVELS)
    _, curl2 = _volume_terms(problem, G)
    tf = _faces_except(mesh, NEUMANN)
    tang2 = _faces_to_elements(mesh, face_norms2(G, tf, "tangential", 2 * G.space.degree + 2), tf)
    terms = {
        "curl": amax * (h / p) ** 2 * curl2,
        "tangential_jump": amax * (h / p) * tang2,
        "oscillation": (h / p) ** 2 * _oscillation(problem, p),
    }
    return EstimatorReport("residual", "mixed", p, terms, oscillation=("oscillation",),
                           metadata={"alpha_levels": ALPHA_LEVELS})


def estimate_standard_ipdg(problem: Problem, output: SchemeOutput) -> EstimatorReport:
    """Classical estimator: residuals of the broken gradient plus penalised
    potential jumps alpha_max p^2 / h_K ||[u_h]||^2."""
    if output.scheme != "ipdg":
        raise ValueError("expected an IPDG solution")
    mesh, coef = problem.mesh, problem.coefficient
    p = output.degree
    uh = output.primary
    h = mesh.diameters
    amin, amax = coef.patch_min(ALPHA_LEVELS), coef.patch_max(ALPHA_LEVELS)
    grad = _broken_gradient(uh)
    div2, _ = _volume_terms(problem, grad)
    nf = _faces_except(mesh, DIRICHLET)
    pf = _faces_except(mesh, NEUMANN)
    qd = 2 * p + 2
    normal2 = _faces_to_elements(mesh, face_norms2(_Mapped(grad, coef.A), nf, "normal", qd), nf)
    jump2 = _faces_to_elements(mesh, face_norms2(uh, pf, "value", qd), pf)
    terms = {
        "div_residual": (h / p) ** 2 * div2 / amin,
        "normal_jump": (h / p) * normal2 / amin,
        "potential_jump": amax * p ** 2 / h * jump2,
    }
    return EstimatorReport("standard", "ipdg", p, terms, metadata={"alpha_levels": ALPHA_LEVELS})


def _broken_gradient(uh: Field) -> Field:
    from .assembly import broken_gradient_matrix

    vec = fem.build_space(uh.mesh, fem.BROKEN_VECTOR, uh.space.degree - 1)
    return Field(vec, broken_gradient_matrix(uh.space, vec) @ uh.coeffs)


def comparison_ratios(residual: EstimatorReport, standard: EstimatorReport, mesh: Mesh) -> np.ndarray:
    """eta_K^2 / (p^2 sum over K' in the face-patch union of K of standard eta_K'^2)."""
    from .mesh import face_patch_union

    p = residual.degree
    eta2, std2 = residual.eta2, standard.eta2
    denom = np.array([std2[face_patch_union(mesh, k)].sum() for k in range(mesh.n_tets)]) * p ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, eta2 / denom, np.where(eta2 > 0, np.inf, 0.0))


__all__ = ["estimate_residual_ipdg", "estimate_residual_mixed", "estimate_standard_ipdg", "comparison_ratios",
           "face_norms2"]
