"""Finite element spaces on tetrahedral meshes.

Every space stores, per element, the coefficients of its local nodal basis in
the monomials of the scaled variable xi = (x - c_K) / h_K.  Degrees of freedom
are moments defined globally on mesh entities (face normals, edge tangents,
sorted vertex parametrisations), so the element basis obtained by inverting the
local functional matrix is conforming without any sign bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from . import polynomials as poly
from .mesh import DIRICHLET, LOCAL_EDGES, LOCAL_FACES, NEUMANN, Mesh
from .quadrature import DATA_DEGREE, line_rule, tet_rule, triangle_rule

LAGRANGE = "Lagrange"
BROKEN_SCALAR = "BrokenScalar"
BROKEN_VECTOR = "BrokenVector"
RAVIART_THOMAS = "RaviartThomas"
NEDELEC = "Nedelec"

MAX_DEGREE = {LAGRANGE: 4, BROKEN_SCALAR: 4, BROKEN_VECTOR: 4, RAVIART_THOMAS: 3, NEDELEC: 3}
MIN_DEGREE = {LAGRANGE: 1, BROKEN_SCALAR: 0, BROKEN_VECTOR: 0, RAVIART_THOMAS: 1, NEDELEC: 1}
SCALAR_FAMILIES = (LAGRANGE, BROKEN_SCALAR)

# entity kinds a dof can be attached to
VERTEX, EDGE, FACE, CELL = 0, 1, 2, 3

_CONSTRAINT_CODES = {None: None, "D": DIRICHLET, "N": NEUMANN}

CHUNK = 256


class SpaceError(ValueError):
    pass


# quadrature on mesh entities ---------------------------------------------

def element_quadrature(mesh: Mesh, elems, degree: int):
    """Physical points (ne, nq, 3) and weights (ne, nq) on the given tets."""
    rule = tet_rule(degree)
    elems = np.asarray(elems)
    x0 = mesh.vertices[mesh.tets[elems, 0]]
    x = x0[:, None, :] + np.einsum("eij,qj->eqi", mesh.jacobians[elems], rule.points)
    w = rule.weights[None, :] * (6.0 * mesh.volumes[elems])[:, None]
    return x, w


def face_quadrature(mesh: Mesh, faces, degree: int):
    """Points (nf, nq, 3), weights (nf, nq) and reference (s, t) on faces.

    The parametrisation runs over the sorted face vertices, so it is shared
    by both adjacent tets.
    """
    rule = triangle_rule(degree)
    faces = np.asarray(faces)
    v = mesh.vertices[mesh.faces[faces]]
    s, t = rule.points[:, 0], rule.points[:, 1]
    x = v[:, None, 0] + s[None, :, None] * (v[:, None, 1] - v[:, None, 0]) + t[None, :, None] * (v[:, None, 2] - v[:, None, 0])
    w = rule.weights[None, :] * (2.0 * mesh.face_areas[faces])[:, None]
    return x, w, rule.points


def edge_quadrature(mesh: Mesh, edges, degree: int):
    rule = line_rule(degree)
    edges = np.asarray(edges)
    v = mesh.vertices[mesh.edges[edges]]
    t = rule.points[:, 0]
    x = v[:, None, 0] + t[None, :, None] * (v[:, None, 1] - v[:, None, 0])
    w = rule.weights[None, :] * mesh.edge_lengths[edges][:, None]
    return x, w, t


def local_coords(mesh: Mesh, elems, x: np.ndarray) -> np.ndarray:
    elems = np.asarray(elems)
    return (x - mesh.centroids[elems][:, None, :]) / mesh.diameters[elems][:, None, None]


# diffusion coefficient ----------------------------------------------------

class Coefficient:
    """Piecewise constant SPD diffusion tensor with cached eigenvalue bounds."""

    def __init__(self, mesh: Mesh, tensors: np.ndarray):
        A = np.asarray(tensors, dtype=float)
        if A.shape != (mesh.n_tets, 3, 3):
            raise ValueError("need one 3x3 tensor per element")
        if np.abs(A - np.swapaxes(A, 1, 2)).max() > 1e-12 * np.abs(A).max():
            raise ValueError("diffusion tensor must be symmetric")
        eig = np.linalg.eigvalsh(A)
        if eig.min() <= 0:
            raise ValueError("diffusion tensor must be positive definite")
        self.mesh = mesh
        self.A = A
        self.Ainv = np.linalg.inv(A)
        self.alpha_min = eig[:, 0]
        self.alpha_max = eig[:, -1]
        self._cache = {}

    @classmethod
    def constant(cls, mesh: Mesh, matrix=None) -> "Coefficient":
        m = np.eye(3) if matrix is None else np.asarray(matrix, dtype=float)
        if m.ndim == 0:
            m = float(m) * np.eye(3)
        return cls(mesh, np.broadcast_to(m, (mesh.n_tets, 3, 3)).copy())

    @classmethod
    def by_region(cls, mesh: Mesh, tensors: dict) -> "Coefficient":
        out = np.empty((mesh.n_tets, 3, 3))
        for k, r in enumerate(mesh.regions):
            m = np.asarray(tensors[int(r)], dtype=float)
            out[k] = m * np.eye(3) if m.ndim == 0 else m
        return cls(mesh, out)

    def min_over(self, tets) -> float:
        return float(self.alpha_min[np.asarray(tets)].min())

    def max_over(self, tets) -> float:
        return float(self.alpha_max[np.asarray(tets)].max())

    def patch_min(self, levels: int) -> np.ndarray:
        """alpha_min over the vertex-extended patch of each element (``levels`` layers)."""
        key = ("amin", levels)
        if key not in self._cache:
            self._cache[key] = self.mesh.patch_extreme(self.alpha_min, levels, np.minimum)
        return self._cache[key]

    def patch_max(self, levels: int) -> np.ndarray:
        key = ("amax", levels)
        if key not in self._cache:
            self._cache[key] = self.mesh.patch_extreme(self.alpha_max, levels, np.maximum)
        return self._cache[key]

    @property
    def is_isotropic_constant(self) -> bool:
        return bool(np.allclose(self.A, self.A[0]) and np.allclose(self.A[0], self.A[0, 0, 0] * np.eye(3)))


# spaces -----------------------------------------------------------------------

@dataclass(eq=False)
class FeSpace:
    mesh: Mesh
    family: str
    degree: int
    constraint: str | None
    coef: np.ndarray  # (T, nloc, ncomp, nm)
    elem_dofs: np.ndarray  # (T, nloc)
    ndofs: int
    constrained: np.ndarray  # (ndofs,) bool
    dof_kind: np.ndarray  # (ndofs,) entity kind
    dof_entity: np.ndarray  # (ndofs,) entity index

    @property
    def nloc(self) -> int:
        return self.elem_dofs.shape[1]

    @property
    def ncomp(self) -> int:
        return self.coef.shape[2]

    @property
    def is_scalar(self) -> bool:
        return self.family in SCALAR_FAMILIES

    @cached_property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained)

    def __repr__(self) -> str:
        return f"FeSpace({self.family}, degree={self.degree}, constraint={self.constraint}, ndofs={self.ndofs})"

    # local polynomial data -------------------------------------------------
    def polys(self, elems, op: str = "value") -> np.ndarray:
        """Basis coefficients after applying ``op``; x-derivatives included.

        Shapes: scalar value (ne, nloc, nm); vector value, grad of scalar,
        curl (ne, nloc, 3, nm); div (ne, nloc, nm); grad of vector
        (ne, nloc, 3, 3, nm).
        """
        elems = np.asarray(elems)
        return apply_op(self.coef[elems], op, self.degree, self.mesh.diameters[elems], self.is_scalar)

    def eval(self, elems, x: np.ndarray, op: str = "value") -> np.ndarray:
        """Basis values at physical points x (ne, nq, 3) -> (ne, nq, nloc, ...)."""
        elems = np.asarray(elems)
        m = poly.monomials(local_coords(self.mesh, elems, x), self.degree)
        return np.einsum("eqm,eb...m->eqb...", m, self.polys(elems, op))

    def zero(self) -> "Field":
        return Field(self, np.zeros(self.ndofs))

    def field(self, coeffs) -> "Field":
        return Field(self, coeffs)

    def degree_mask(self, degree: int) -> np.ndarray:
        """Local dofs of a hierarchical broken space that span degree <= ``degree``."""
        if self.family not in (BROKEN_SCALAR, BROKEN_VECTOR):
            raise SpaceError("degree masks only exist for broken spaces")
        nm = poly.count(self.degree)
        keep = np.arange(nm) < poly.count(degree)
        return np.tile(keep, self.ncomp) if self.family == BROKEN_VECTOR else keep


def apply_op(coef: np.ndarray, op: str, degree: int, h: np.ndarray, scalar: bool) -> np.ndarray:
    """Apply a differential operator to coefficient arrays (ne, nb, ncomp, nm)."""
    inv_h = 1.0 / h
    if scalar:
        c = coef[:, :, 0, :] if coef.ndim == 4 else coef
        if op == "value":
            return c
        if op == "grad":
            return poly.gradient(c, degree) * inv_h[:, None, None, None]
        raise SpaceError(f"operator {op!r} not defined for scalar spaces")
    if op == "value":
        return coef
    if op == "div":
        return poly.divergence(coef, degree) * inv_h[:, None, None]
    if op == "curl":
        return poly.curl(coef, degree) * inv_h[:, None, None, None]
    if op == "grad":
        return poly.jacobian(coef, degree) * inv_h[:, None, None, None, None]
    raise SpaceError(f"unknown operator {op!r}")


@dataclass(eq=False)
class Field:
    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.ndofs,):
            raise SpaceError(f"expected {self.space.ndofs} coefficients, got {self.coeffs.shape}")

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def polys(self, elems, op: str = "value") -> np.ndarray:
        elems = np.asarray(elems)
        c = self.coeffs[self.space.elem_dofs[elems]]
        b = self.space.polys(elems, op)
        return np.einsum("eb,eb...->e...", c, b)

    def eval(self, elems, x: np.ndarray, op: str = "value") -> np.ndarray:
        """Values (ne, nq, ...) at physical points x (ne, nq, 3) of the given tets."""
        elems = np.asarray(elems)
        m = poly.monomials(local_coords(self.mesh, elems, x), self.space.degree)
        return np.einsum("eqm,e...m->eq...", m, self.polys(elems, op))

    def __add__(self, other: "Field") -> "Field":
        _same(self, other)
        return Field(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "Field") -> "Field":
        _same(self, other)
        return Field(self.space, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "Field":
        return Field(self.space, self.coeffs * s)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.space, -self.coeffs)

    def constrained_values(self) -> np.ndarray:
        return self.coeffs[self.space.constrained]


def _same(a: Field, b: Field) -> None:
    if a.space is not b.space:
        raise SpaceError("fields live in different spaces")


# local functionals ---------------------------------------------------------------

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _face_test(k: int, pts2: np.ndarray) -> np.ndarray:
    return poly.monomials(pts2, k) if k >= 0 else np.zeros((len(pts2), 0))


def rt_functionals(mesh: Mesh, degree: int, elems, evaluate: Evaluator) -> np.ndarray:
    """Moment dofs of RT_degree applied to vector data -> (ne, nloc, nfun).

    ``evaluate(elems, x)`` returns (ne, nq, nfun, 3).  Face moments are
    averages of v.n_F against P_{k-1}(F) in the sorted-vertex parametrisation,
    interior moments averages against P_{k-2}^3.
    """
    k = degree
    elems = np.asarray(elems)
    qd = 2 * k + 2
    out = []
    for j in range(4):
        faces = mesh.tet_faces[elems, j]
        x, w, ref = face_quadrature(mesh, faces, qd)
        vals = evaluate(elems, x)
        vn = np.einsum("eqrc,ec->eqr", vals, mesh.face_normals[faces])
        test = _face_test(k - 1, ref)
        wn = w / mesh.face_areas[faces][:, None]
        out.append(np.einsum("eq,qa,eqr->ear", wn, test, vn))
    if k >= 2:
        x, w = element_quadrature(mesh, elems, qd)
        vals = evaluate(elems, x)
        test = poly.monomials(local_coords(mesh, elems, x), k - 2)
        wn = w / mesh.volumes[elems][:, None]
        out.append(np.einsum("eq,eqa,eqrc->ecar", wn, test, vals).reshape(len(elems), -1, vals.shape[2]))
    return np.concatenate(out, axis=1)


def _face_tangents(mesh: Mesh, faces) -> np.ndarray:
    v = mesh.vertices[mesh.faces[faces]]
    t = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=1)
    return t / np.linalg.norm(t, axis=-1, keepdims=True)


def nedelec_functionals(mesh: Mesh, degree: int, elems, evaluate: Evaluator) -> np.ndarray:
    """Moment dofs of N_degree: edge tangential averages against t^a (a < k),
    tangential face averages against P_{k-2}(F), interior against P_{k-3}^3."""
    k = degree
    elems = np.asarray(elems)
    qd = 2 * k + 2
    out = []
    for le in range(6):
        edges = mesh.tet_edges[elems, le]
        x, w, t = edge_quadrature(mesh, edges, qd)
        vals = evaluate(elems, x)
        vt = np.einsum("eqrc,ec->eqr", vals, mesh.edge_tangents[edges])
        test = t[:, None] ** np.arange(k)[None, :]
        wn = w / mesh.edge_lengths[edges][:, None]
        out.append(np.einsum("eq,qa,eqr->ear", wn, test, vt))
    if k >= 2:
        for j in range(4):
            faces = mesh.tet_faces[elems, j]
            x, w, ref = face_quadrature(mesh, faces, qd)
            vals = evaluate(elems, x)
            vt = np.einsum("eqrc,etc->eqtr", vals, _face_tangents(mesh, faces))
            test = _face_test(k - 2, ref)
            wn = w / mesh.face_areas[faces][:, None]
            out.append(np.einsum("eq,qa,eqtr->etar", wn, test, vt).reshape(len(elems), -1, vals.shape[2]))
    if k >= 3:
        x, w = element_quadrature(mesh, elems, qd)
        vals = evaluate(elems, x)
        test = poly.monomials(local_coords(mesh, elems, x), k - 3)
        wn = w / mesh.volumes[elems][:, None]
        out.append(np.einsum("eq,eqa,eqrc->ecar", wn, test, vals).reshape(len(elems), -1, vals.shape[2]))
    return np.concatenate(out, axis=1)


def lattice(k: int) -> np.ndarray:
    """Barycentric multi-indices (npts, 4) of the degree-k principal lattice."""
    pts = [(a, b, c, k - a - b - c) for a in range(k, -1, -1) for b in range(k - a, -1, -1)
           for c in range(k - a - b, -1, -1)]
    return np.array(pts, dtype=np.int64)


def lagrange_points(mesh: Mesh, degree: int, elems) -> np.ndarray:
    lam = lattice(degree) / degree
    return np.einsum("pj,ejc->epc", lam, mesh.vertices[mesh.tets[np.asarray(elems)]])


def lagrange_functionals(mesh: Mesh, degree: int, elems, evaluate: Evaluator) -> np.ndarray:
    vals = evaluate(np.asarray(elems), lagrange_points(mesh, degree, elems))
    return vals[..., 0]


def _raw_evaluator(mesh: Mesh, raw: np.ndarray, degree: int) -> Evaluator:
    def evaluate(elems, x):
        m = poly.monomials(local_coords(mesh, elems, x), degree)
        return np.einsum("eqm,rcm->eqrc", m, raw)
    return evaluate


def _nodal_coefficients(mesh: Mesh, raw: np.ndarray, degree: int, functionals) -> np.ndarray:
    out = np.empty((mesh.n_tets,) + raw.shape)
    for s in range(0, mesh.n_tets, CHUNK):
        elems = np.arange(s, min(s + CHUNK, mesh.n_tets))
        D = functionals(mesh, degree, elems, _raw_evaluator(mesh, raw, degree))
        C = np.linalg.inv(D)
        out[elems] = np.einsum("eij,icm->ejcm", C, raw)
    return out


# space builders ----------------------------------------------------------------------

def build_space(mesh: Mesh, family: str, degree: int, constraint: str | None = None) -> FeSpace:
    """Build (or fetch from the mesh cache) a finite element space.

    ``constraint`` names the labelled boundary part, "D" or "N", on which the
    natural trace of the space vanishes; None leaves the space unconstrained.
    """
    if family not in MAX_DEGREE:
        raise SpaceError(f"unknown family {family!r}")
    if not MIN_DEGREE[family] <= degree <= MAX_DEGREE[family]:
        raise SpaceError(f"{family} degree {degree} outside supported range "
                         f"[{MIN_DEGREE[family]}, {MAX_DEGREE[family]}]")
    if constraint not in _CONSTRAINT_CODES:
        raise SpaceError(f"unknown constraint {constraint!r}")
    if constraint is not None and family in (BROKEN_SCALAR, BROKEN_VECTOR):
        raise SpaceError("broken spaces carry no boundary constraint")
    key = ("space", family, degree, constraint)
    cache = mesh._cache
    if key not in cache:
        if constraint is not None:
            base = build_space(mesh, family, degree, None)
            cache[key] = _constrain(base, constraint)
        else:
            builder = {LAGRANGE: _lagrange, BROKEN_SCALAR: _broken, BROKEN_VECTOR: _broken,
                       RAVIART_THOMAS: _raviart_thomas, NEDELEC: _nedelec}[family]
            cache[key] = builder(mesh, family, degree)
    return cache[key]


def _constrain(base: FeSpace, constraint: str) -> FeSpace:
    mesh = base.mesh
    code = _CONSTRAINT_CODES[constraint]
    faces = np.flatnonzero(mesh.face_label == code)
    mask = np.zeros(base.ndofs, dtype=bool)
    if base.family == RAVIART_THOMAS:
        mask = (base.dof_kind == FACE) & np.isin(base.dof_entity, faces)
    elif base.family == NEDELEC:
        edges = np.unique(mesh.face_edges[faces])
        mask = ((base.dof_kind == FACE) & np.isin(base.dof_entity, faces)) | \
               ((base.dof_kind == EDGE) & np.isin(base.dof_entity, edges))
    elif base.family == LAGRANGE:
        mask = _lagrange_boundary_mask(base, faces)
    return FeSpace(mesh, base.family, base.degree, constraint, base.coef, base.elem_dofs, base.ndofs,
                   mask, base.dof_kind, base.dof_entity)


def _lagrange_boundary_mask(space: FeSpace, faces: np.ndarray) -> np.ndarray:
    mesh = space.mesh
    lat = lattice(space.degree)
    mask = np.zeros(space.ndofs, dtype=bool)
    for f in faces:
        e = mesh.face_tets[f, 0]
        j = int(np.flatnonzero(mesh.tet_faces[e] == f)[0])
        mask[space.elem_dofs[e, lat[:, j] == 0]] = True
    return mask


def _lagrange(mesh: Mesh, family: str, k: int) -> FeSpace:
    raw = poly.scalar_basis(k)
    coef = _nodal_coefficients(mesh, raw, k, lagrange_functionals)
    lat = lattice(k)
    keys: dict = {((v,), (k,)): v for v in range(mesh.n_vertices)}
    kinds = [VERTEX] * mesh.n_vertices
    ents = list(range(mesh.n_vertices))
    elem_dofs = np.empty((mesh.n_tets, len(lat)), dtype=np.int64)
    support = lat > 0
    edge_lookup = {tuple(e): i for i, e in enumerate(mesh.edges.tolist())}
    face_lookup = {tuple(f): i for i, f in enumerate(mesh.faces.tolist())}
    for e, tet in enumerate(mesh.tets.tolist()):
        for p in range(len(lat)):
            idx = np.flatnonzero(support[p])
            verts = tuple(tet[i] for i in idx)
            key = (verts, tuple(int(lat[p, i]) for i in idx))
            d = keys.get(key)
            if d is None:
                d = len(keys)
                keys[key] = d
                n = len(verts)
                kinds.append(n - 1)
                ents.append(edge_lookup[verts] if n == 2 else face_lookup[verts] if n == 3 else e)
            elem_dofs[e, p] = d
    n = len(keys)
    return FeSpace(mesh, family, k, None, coef, elem_dofs, n, np.zeros(n, dtype=bool),
                   np.array(kinds), np.array(ents))


def _broken(mesh: Mesh, family: str, k: int) -> FeSpace:
    nm = poly.count(k)
    x, w = element_quadrature(mesh, np.arange(mesh.n_tets), 2 * k + 2)
    m = poly.monomials(local_coords(mesh, np.arange(mesh.n_tets), x), k)
    gram = np.einsum("eq,eqi,eqj->eij", w, m, m)
    L = np.linalg.cholesky(gram)
    Linv = np.linalg.inv(L)  # rows: orthonormal functions, hierarchical
    if family == BROKEN_SCALAR:
        coef = Linv[:, :, None, :]
    else:
        coef = np.zeros((mesh.n_tets, 3, nm, 3, nm))
        for c in range(3):
            coef[:, c, :, c, :] = Linv
        coef = coef.reshape(mesh.n_tets, 3 * nm, 3, nm)
    nloc = coef.shape[1]
    n = mesh.n_tets * nloc
    elem_dofs = np.arange(n).reshape(mesh.n_tets, nloc)
    return FeSpace(mesh, family, k, None, coef, elem_dofs, n, np.zeros(n, dtype=bool),
                   np.full(n, CELL), np.repeat(np.arange(mesh.n_tets), nloc))


def _raviart_thomas(mesh: Mesh, family: str, k: int) -> FeSpace:
    raw = poly.raviart_thomas_basis(k)
    coef = _nodal_coefficients(mesh, raw, k, rt_functionals)
    nf = poly.count(k - 1, 2)
    ni = 3 * poly.count(k - 2)
    T, F = mesh.n_tets, mesh.n_faces
    face_part = (mesh.tet_faces[:, :, None] * nf + np.arange(nf)).reshape(T, 4 * nf)
    cell_part = F * nf + (np.arange(T)[:, None] * ni + np.arange(ni))
    elem_dofs = np.concatenate([face_part, cell_part], axis=1)
    n = F * nf + T * ni
    kinds = np.concatenate([np.full(F * nf, FACE), np.full(T * ni, CELL)])
    ents = np.concatenate([np.repeat(np.arange(F), nf), np.repeat(np.arange(T), ni)])
    return FeSpace(mesh, family, k, None, coef, elem_dofs, n, np.zeros(n, dtype=bool), kinds, ents)


def _nedelec(mesh: Mesh, family: str, k: int) -> FeSpace:
    raw = poly.nedelec_basis(k)
    coef = _nodal_coefficients(mesh, raw, k, nedelec_functionals)
    ne_ = k
    nf = 2 * poly.count(k - 2, 2)
    ni = 3 * poly.count(k - 3)
    T, F, E = mesh.n_tets, mesh.n_faces, mesh.n_edges
    parts = [(mesh.tet_edges[:, :, None] * ne_ + np.arange(ne_)).reshape(T, 6 * ne_)]
    if nf:
        parts.append(E * ne_ + (mesh.tet_faces[:, :, None] * nf + np.arange(nf)).reshape(T, 4 * nf))
    if ni:
        parts.append(E * ne_ + F * nf + (np.arange(T)[:, None] * ni + np.arange(ni)))
    elem_dofs = np.concatenate(parts, axis=1)
    n = E * ne_ + F * nf + T * ni
    kinds = np.concatenate([np.full(E * ne_, EDGE), np.full(F * nf, FACE), np.full(T * ni, CELL)])
    ents = np.concatenate([np.repeat(np.arange(E), ne_), np.repeat(np.arange(F), nf), np.repeat(np.arange(T), ni)])
    return FeSpace(mesh, family, k, None, coef, elem_dofs, n, np.zeros(n, dtype=bool), kinds, ents)


# interpolation -------------------------------------------------------------------------

_FUNCTIONALS = {LAGRANGE: lagrange_functionals, RAVIART_THOMAS: rt_functionals, NEDELEC: nedelec_functionals}


def local_dofs(space: FeSpace, elems, evaluate: Evaluator) -> np.ndarray:
    """Apply the space's dof functionals on each element -> (ne, nloc, nfun)."""
    elems = np.asarray(elems)
    if space.family in _FUNCTIONALS:
        return _FUNCTIONALS[space.family](space.mesh, space.degree, elems, evaluate)
    x, w = element_quadrature(space.mesh, elems, 2 * space.degree + 4)
    vals = evaluate(elems, x)
    basis = space.eval(elems, x)
    if space.family == BROKEN_SCALAR:
        return np.einsum("eq,eqb,eqr->ebr", w, basis, vals[..., 0])
    return np.einsum("eq,eqbc,eqrc->ebr", w, basis, vals)


def interpolate(space: FeSpace, func: Callable[[np.ndarray], np.ndarray]) -> Field:
    """Canonical interpolant of a function of physical points.

    ``func`` maps (..., 3) to (...,) for scalar spaces or (..., 3) for vector
    spaces.  Shared dofs take the value computed on the lowest-index element.
    """
    def evaluate(elems, x):
        v = np.asarray(func(x), dtype=float)
        if space.is_scalar:
            v = v[..., None]
        return v[:, :, None, :]

    elems = np.arange(space.mesh.n_tets)
    vals = np.concatenate([local_dofs(space, elems[s:s + CHUNK], evaluate)[..., 0]
                           for s in range(0, len(elems), CHUNK)])
    flat = space.elem_dofs.ravel()
    _, first = np.unique(flat, return_index=True)
    coeffs = np.zeros(space.ndofs)
    coeffs[flat[first]] = vals.ravel()[first]
    coeffs[space.constrained] = 0.0
    return Field(space, coeffs)


# partition-of-unity functions ----------------------------------------------------------------

def hat_function(mesh: Mesh, vertex: int) -> Field:
    """Piecewise linear hat function psi_a of a vertex."""
    space = build_space(mesh, LAGRANGE, 1)
    if not 0 <= vertex < mesh.n_vertices:
        raise IndexError(f"vertex {vertex} out of range")
    c = np.zeros(space.ndofs)
    c[vertex] = 1.0
    return Field(space, c)


def edge_function(mesh: Mesh, edge: int) -> Field:
    """Lowest-order Nedelec function psi_l with unit average tangential moment on its
    edge, so its line integral along the edge equals the edge length."""
    space = build_space(mesh, NEDELEC, 1)
    if not 0 <= edge < mesh.n_edges:
        raise IndexError(f"edge {edge} out of range")
    c = np.zeros(space.ndofs)
    c[edge] = 1.0
    return Field(space, c)


# projections and traces ----------------------------------------------------------------

def project_broken(mesh: Mesh, q: int, f: Callable[[np.ndarray], np.ndarray],
                   quad_degree: int = DATA_DEGREE) -> Field:
    """Elementwise L2 projection of f onto P_{q-1}."""
    if q < 1:
        raise SpaceError("projection index q must be >= 1")
    space = build_space(mesh, BROKEN_SCALAR, q - 1)
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, quad_degree)
    vals = np.asarray(f(x), dtype=float)
    basis = space.eval(elems, x)
    c = np.einsum("eq,eqb,eq->eb", w, basis, vals)
    return Field(space, c.ravel())


@dataclass
class FaceTrace:
    faces: np.ndarray
    x: np.ndarray  # (nf, nq, 3)
    w: np.ndarray  # (nf, nq)
    minus: np.ndarray  # trace from face_tets[:, 0]
    plus: np.ndarray  # trace from face_tets[:, 1]; zero on boundary faces
    interior: np.ndarray  # (nf,) bool

    @property
    def jump(self) -> np.ndarray:
        return self.minus - self.plus

    @property
    def average(self) -> np.ndarray:
        s = np.where(self.interior, 0.5, 1.0).reshape((-1,) + (1,) * (self.minus.ndim - 1))
        return s * (self.minus + self.plus)


def face_trace(field, faces, kind: str = "value", degree: int | None = None) -> FaceTrace:
    """Traces of ``field`` on each side of the given faces.

    ``field`` is a Field or any object with ``eval(elems, x, op)`` and a
    ``mesh``.  ``kind`` selects the full value, the normal component v.n_F or
    the tangential part v x n_F.  Jumps follow the convention
    [v] = v_K (n_K.n_F) + v_K' (n_K'.n_F), i.e. minus-side value minus
    plus-side value, and reduce to the one-sided trace on boundary faces.
    """
    mesh = field.mesh
    faces = np.asarray(faces)
    if kind not in ("value", "normal", "tangential"):
        raise SpaceError(f"unknown trace kind {kind!r}")
    is_scalar = getattr(getattr(field, "space", None), "is_scalar", False)
    if kind != "value" and is_scalar:
        raise SpaceError(f"{kind} trace needs a vector-valued field")
    if degree is None:
        degree = 2 * getattr(getattr(field, "space", None), "degree", 4) + 2
    x, w, _ = face_quadrature(mesh, faces, degree)
    n = mesh.face_normals[faces]

    def side(tets):
        ok = tets >= 0
        v = field.eval(np.where(ok, tets, 0), x)
        if kind == "normal":
            v = np.einsum("fqc,fc->fq", v, n)
        elif kind == "tangential":
            v = np.cross(v, n[:, None, :])
        return v * ok.reshape((-1,) + (1,) * (v.ndim - 1))

    interior = mesh.face_tets[faces, 1] >= 0
    return FaceTrace(faces, x, w, side(mesh.face_tets[faces, 0]), side(mesh.face_tets[faces, 1]), interior)
