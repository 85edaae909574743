"""Global form assembly, jump lifting and the IPDG bilinear form.

Sparse matrices are plain ``scipy.sparse.csr_matrix`` objects.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import (BROKEN_SCALAR, BROKEN_VECTOR, LAGRANGE, NEDELEC, RAVIART_THOMAS, Coefficient, FeSpace,
                  Field, element_quadrature, face_quadrature)
from .mesh import DIRICHLET, INTERIOR, Mesh
from .quadrature import DATA_DEGREE

FORMS = ("stiffness", "mass", "weightedmass", "div-pairing", "curl-stiffness", "load")


class AssemblyError(ValueError):
    pass


def _chunks(n: int, size: int = fem.CHUNK):
    for s in range(0, n, size):
        yield np.arange(s, min(s + size, n))


def gram(w: np.ndarray, v: np.ndarray, u: np.ndarray) -> np.ndarray:
    """sum_q w_q v_qa . u_qb per element, for values (ne, nq, n[, ncomp]) -> (ne, na, nb)."""
    if v.ndim == 3:
        v, u = v[..., None], u[..., None]
    ne, nq, na, nc = v.shape
    vw = (v * w[:, :, None, None]).transpose(0, 2, 1, 3).reshape(ne, na, nq * nc)
    uu = u.transpose(0, 2, 1, 3).reshape(ne, u.shape[2], nq * nc)
    return vw @ uu.transpose(0, 2, 1)


def element_matrices(form: str, trial: FeSpace, test: FeSpace | None = None, coefficient: Coefficient | None = None,
                     elems=None, weight: str = "A", quad_degree: int | None = None) -> np.ndarray:
    """Local matrices (ne, n_test, n_trial) of a bilinear form on the given tets."""
    test = trial if test is None else test
    mesh = trial.mesh
    elems = np.arange(mesh.n_tets) if elems is None else np.asarray(elems)
    if quad_degree is None:
        quad_degree = trial.degree + test.degree
    x, w = element_quadrature(mesh, elems, quad_degree)
    W = None
    if coefficient is not None:
        W = coefficient.A[elems] if weight == "A" else coefficient.Ainv[elems]

    if form == "stiffness":
        if not (trial.is_scalar and test.is_scalar):
            raise AssemblyError("stiffness needs scalar spaces")
        gu, gv = trial.eval(elems, x, "grad"), test.eval(elems, x, "grad")
        if W is not None:
            gu = np.einsum("eij,eqbj->eqbi", W, gu)
        return gram(w, gv, gu)
    if form == "mass":
        u, v = trial.eval(elems, x), test.eval(elems, x)
        if trial.is_scalar != test.is_scalar:
            raise AssemblyError("mass pairs spaces of equal rank")
        return gram(w, v, u)
    if form == "weightedmass":
        if trial.is_scalar or test.is_scalar:
            raise AssemblyError("weighted mass needs vector spaces")
        if W is None:
            raise AssemblyError("weighted mass needs a coefficient")
        u, v = trial.eval(elems, x), test.eval(elems, x)
        return gram(w, v, np.einsum("eij,eqbj->eqbi", W, u))
    if form == "div-pairing":
        if trial.family != RAVIART_THOMAS or not test.is_scalar:
            raise AssemblyError("div-pairing pairs an RT trial space with a scalar test space")
        return gram(w, test.eval(elems, x), trial.eval(elems, x, "div"))
    if form == "curl-stiffness":
        if trial.family != NEDELEC or test.family != NEDELEC:
            raise AssemblyError("curl-stiffness needs Nedelec spaces")
        cu, cv = trial.eval(elems, x, "curl"), test.eval(elems, x, "curl")
        if W is not None:
            cu = np.einsum("eij,eqbj->eqbi", coefficient.Ainv[elems], cu)
        return gram(w, cv, cu)
    raise AssemblyError(f"unknown bilinear form {form!r}")


def assemble(form: str, trial: FeSpace, test: FeSpace | None = None, coefficient: Coefficient | None = None,
             weight: str = "A", f: Callable | None = None, quad_degree: int | None = None):
    """Assemble a global matrix (csr) or, for ``form='load'``, a vector.

    Rows index the test space, columns the trial space.  ``weight`` picks A or
    A^-1 ("Ainv") for the weighted mass.
    """
    if form == "load":
        return assemble_load(trial, f, quad_degree)
    test = trial if test is None else test
    if test.mesh is not trial.mesh:
        raise AssemblyError("spaces live on different meshes")
    rows, cols, vals = [], [], []
    for elems in _chunks(trial.mesh.n_tets):
        loc = element_matrices(form, trial, test, coefficient, elems, weight, quad_degree)
        rows.append(np.broadcast_to(test.elem_dofs[elems][:, :, None], loc.shape).ravel())
        cols.append(np.broadcast_to(trial.elem_dofs[elems][:, None, :], loc.shape).ravel())
        vals.append(loc.ravel())
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(test.ndofs, trial.ndofs)).tocsr()
    M.sum_duplicates()
    return M


def assemble_load(space: FeSpace, f: Callable, quad_degree: int | None = None) -> np.ndarray:
    """(f, v) for all basis functions v; f maps points (..., 3) to values."""
    quad_degree = DATA_DEGREE if quad_degree is None else quad_degree
    b = np.zeros(space.ndofs)
    for elems in _chunks(space.mesh.n_tets):
        x, w = element_quadrature(space.mesh, elems, quad_degree)
        fx = np.asarray(f(x), dtype=float)
        v = space.eval(elems, x)
        loc = np.einsum("eq,eqb,eq->eb", w, v, fx) if space.is_scalar else np.einsum("eq,eqbc,eqc->eb", w, v, fx)
        np.add.at(b, space.elem_dofs[elems], loc)
    return b


def is_symmetric(M, tol: float = 1e-12) -> bool:
    M = sp.csr_matrix(M)
    if M.nnz == 0:
        return True
    return abs(M - M.T).max() <= tol * abs(M).max()


# face machinery for DG -------------------------------------------------------------

def dg_faces(mesh: Mesh) -> np.ndarray:
    """Interior and Dirichlet faces, the faces carrying DG jump terms."""
    return np.flatnonzero((mesh.face_label == INTERIOR) | (mesh.face_label == DIRICHLET))


def _side_data(space: FeSpace, faces: np.ndarray, x: np.ndarray, side: int, op: str = "value"):
    mesh = space.mesh
    tets = mesh.face_tets[faces, side]
    ok = tets >= 0
    safe = np.where(ok, tets, 0)
    vals = space.eval(safe, x, op)
    vals = vals * ok.reshape((-1,) + (1,) * (vals.ndim - 1))
    dofs = space.elem_dofs[safe]
    return tets, ok, vals, dofs


def _scatter(blocks, shape):
    rows = np.concatenate([r for r, _, _ in blocks])
    cols = np.concatenate([c for _, c, _ in blocks])
    vals = np.concatenate([v for _, _, v in blocks])
    M = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    M.sum_duplicates()
    M.eliminate_zeros()
    return M


def _block(rows_dofs, cols_dofs, loc):
    r = np.broadcast_to(rows_dofs[:, :, None], loc.shape).ravel()
    c = np.broadcast_to(cols_dofs[:, None, :], loc.shape).ravel()
    return r, c, loc.ravel()


def lifting_matrix(scalar: FeSpace, vector: FeSpace) -> sp.csr_matrix:
    """Matrix of v -> sum_F ([v], {w}.n_F)_F over interior and Dirichlet faces.

    With the orthonormal broken vector basis this is also the coefficient map
    of the jump lifting.
    """
    mesh = scalar.mesh
    faces = dg_faces(mesh)
    x, w, _ = face_quadrature(mesh, faces, scalar.degree + vector.degree + 2)
    n = mesh.face_normals[faces]
    interior = mesh.face_tets[faces, 1] >= 0
    avg = np.where(interior, 0.5, 1.0)
    blocks = []
    for s in (0, 1):
        _, _, wv, wd = _side_data(vector, faces, x, s)
        wn = np.einsum("fqbc,fc->fqb", wv, n) * avg[:, None, None]
        for t in (0, 1):
            _, _, vv, vd = _side_data(scalar, faces, x, t)
            sign = 1.0 if t == 0 else -1.0
            loc = sign * np.einsum("fq,fqa,fqb->fab", w, wn, vv)
            blocks.append(_block(wd, vd, loc))
    return _scatter(blocks, (vector.ndofs, scalar.ndofs))


def broken_gradient_matrix(scalar: FeSpace, vector: FeSpace) -> sp.csr_matrix:
    """L2 projection of the elementwise gradient into the broken vector space."""
    mesh = scalar.mesh
    rows, cols, vals = [], [], []
    for elems in _chunks(mesh.n_tets):
        x, w = element_quadrature(mesh, elems, scalar.degree + vector.degree + 2)
        loc = np.einsum("eq,eqac,eqbc->eab", w, vector.eval(elems, x), scalar.eval(elems, x, "grad"))
        r, c, v = _block(vector.elem_dofs[elems], scalar.elem_dofs[elems], loc)
        rows.append(r), cols.append(c), vals.append(v)
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(vector.ndofs, scalar.ndofs)).tocsr()


def _orthonormal(space: FeSpace) -> None:
    if space.family not in (BROKEN_SCALAR, BROKEN_VECTOR):
        raise AssemblyError("expected a broken space")


def lifting(u_dg: Field, lifting_degree: int | None = None) -> Field:
    """Jump lifting of a broken scalar field into the broken vector space of
    degree p-1; with ``lifting_degree`` 0 the jumps are lifted into piecewise
    constants (represented inside the same degree p-1 space)."""
    scalar = u_dg.space
    _orthonormal(scalar)
    p = scalar.degree
    if p < 1:
        raise AssemblyError("lifting needs p >= 1")
    vector = fem.build_space(scalar.mesh, BROKEN_VECTOR, p - 1)
    key = ("lifting", p)
    cache = scalar.mesh._cache
    if key not in cache:
        cache[key] = lifting_matrix(scalar, vector)
    c = cache[key] @ u_dg.coeffs
    if lifting_degree is not None and lifting_degree < p - 1:
        mask = vector.degree_mask(lifting_degree)
        c = (c.reshape(scalar.mesh.n_tets, -1) * mask).ravel()
    return Field(vector, c)


def discrete_gradient(u_dg: Field, lifting_degree: int | None = None) -> Field:
    """Broken gradient minus jump lifting.

    This sign makes (G(v), xi) = -(v, div xi) for every xi in the broken
    vector space of degree p-1 with zero normal trace on the Neumann boundary.
    """
    scalar = u_dg.space
    _orthonormal(scalar)
    vector = fem.build_space(scalar.mesh, BROKEN_VECTOR, scalar.degree - 1)
    key = ("bgrad", scalar.degree)
    cache = scalar.mesh._cache
    if key not in cache:
        cache[key] = broken_gradient_matrix(scalar, vector)
    grad = cache[key] @ u_dg.coeffs
    return Field(vector, grad - lifting(u_dg, lifting_degree).coeffs)


def penalty_weights(mesh: Mesh, coefficient: Coefficient, faces: np.ndarray, p: int, beta: float) -> np.ndarray:
    tets = mesh.face_tets[faces]
    amax = np.where(tets >= 0, coefficient.alpha_max[np.where(tets >= 0, tets, 0)], 0.0).max(axis=1)
    return beta * amax * p ** 2 / mesh.face_diameters[faces]


def ipdg_matrices(space: FeSpace, coefficient: Coefficient, beta: float):
    """Volume, consistency and penalty parts of the symmetric IPDG form."""
    mesh = space.mesh
    p = space.degree
    volume = assemble("stiffness", space, coefficient=coefficient)
    faces = dg_faces(mesh)
    x, w, _ = face_quadrature(mesh, faces, 2 * p + 2)
    n = mesh.face_normals[faces]
    interior = mesh.face_tets[faces, 1] >= 0
    avg = np.where(interior, 0.5, 1.0)
    pen = penalty_weights(mesh, coefficient, faces, p, beta)
    sides = []
    for s in (0, 1):
        tets, ok, v, d = _side_data(space, faces, x, s)
        g = _side_data(space, faces, x, s, "grad")[2]
        A = coefficient.A[np.where(ok, tets, 0)]
        flux = np.einsum("fc,fcd,fqbd->fqb", n, A, g) * avg[:, None, None]
        jump = v * (1.0 if s == 0 else -1.0)
        sides.append((jump, flux, d))
    consist, penalty = [], []
    for s in (0, 1):
        js, fs, ds = sides[s]
        for t in (0, 1):
            jt, ft, dt = sides[t]
            c = -np.einsum("fq,fqa,fqb->fab", w, js, ft) - np.einsum("fq,fqa,fqb->fab", w, fs, jt)
            consist.append(_block(ds, dt, c))
            penalty.append(_block(ds, dt, pen[:, None, None] * np.einsum("fq,fqa,fqb->fab", w, js, jt)))
    shape = (space.ndofs, space.ndofs)
    return volume, _scatter(consist, shape), _scatter(penalty, shape)
