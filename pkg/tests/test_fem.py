import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aposteriori3d import fem
from aposteriori3d.fem import (BROKEN_SCALAR, BROKEN_VECTOR, LAGRANGE, NEDELEC, RAVIART_THOMAS, Coefficient, Field,
                               SpaceError, build_space, edge_function, edge_quadrature, element_quadrature,
                               face_trace, hat_function, interpolate, project_broken)
from aposteriori3d.mesh import build_structured_cube
from aposteriori3d.quadrature import tet_rule, triangle_rule

from helpers import random_points_in_tets


@pytest.fixture(scope="module")
def m1():
    return build_structured_cube(1)


@pytest.fixture(scope="module")
def m2():
    return build_structured_cube(2, {"x0": "N"})


# quadrature ------------------------------------------------------------------------------------

@pytest.mark.parametrize("degree", [0, 1, 2, 4, 7, 10])
def test_tet_rule_exactness(degree):
    rule = tet_rule(degree)
    assert rule.weights.sum() == pytest.approx(1 / 6, rel=1e-13)
    from math import factorial
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            c = degree - a - b
            exact = factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)
            x, y, z = rule.points.T
            assert np.dot(rule.weights, x ** a * y ** b * z ** c) == pytest.approx(exact, rel=1e-13, abs=1e-16)


@pytest.mark.parametrize("degree", [1, 3, 6])
def test_triangle_rule_exactness(degree):
    rule = triangle_rule(degree)
    from math import factorial
    s, t = rule.points.T
    for a in range(degree + 1):
        b = degree - a
        exact = factorial(a) * factorial(b) / factorial(a + b + 2)
        assert np.dot(rule.weights, s ** a * t ** b) == pytest.approx(exact, rel=1e-13)


# spaces ----------------------------------------------------------------------------------------

def test_space_examples(m1):
    dm = build_structured_cube(1)
    lag = build_space(dm, LAGRANGE, 1, "D")
    assert lag.ndofs == 8 and lag.constrained.all()
    assert build_space(m1, NEDELEC, 1).ndofs == 19
    assert build_space(m1, RAVIART_THOMAS, 1).ndofs == 18


@pytest.mark.parametrize("q", [1, 2, 3])
def test_local_dimensions(m1, q):
    assert build_space(m1, RAVIART_THOMAS, q).nloc == q * (q + 1) * (q + 3) // 2
    assert build_space(m1, NEDELEC, q).nloc == q * (q + 2) * (q + 3) // 2


@pytest.mark.parametrize("family,degree", [(RAVIART_THOMAS, 4), (NEDELEC, 0), (LAGRANGE, 5), (BROKEN_SCALAR, -1)])
def test_unsupported_degree(m1, family, degree):
    with pytest.raises(SpaceError):
        build_space(m1, family, degree)


@pytest.mark.parametrize("family,degree", [(LAGRANGE, 2), (RAVIART_THOMAS, 2), (NEDELEC, 3), (RAVIART_THOMAS, 3)])
def test_conformity(m2, rng, family, degree):
    space = build_space(m2, family, degree)
    v = Field(space, rng.standard_normal(space.ndofs))
    faces = m2.interior_faces
    kind = {LAGRANGE: "value", RAVIART_THOMAS: "normal", NEDELEC: "tangential"}[family]
    tr = face_trace(v, faces, kind)
    scale = np.abs(tr.minus).max()
    assert np.abs(tr.jump).max() <= 1e-12 * max(scale, 1.0)


@pytest.mark.parametrize("family,constraint", [(RAVIART_THOMAS, "N"), (NEDELEC, "D"), (LAGRANGE, "D")])
def test_constrained_traces_vanish(m2, rng, family, constraint):
    space = build_space(m2, family, 2, constraint)
    c = rng.standard_normal(space.ndofs)
    c[space.constrained] = 0.0
    v = Field(space, c)
    assert np.all(v.constrained_values() == 0)
    code = {"D": 1, "N": 2}[constraint]
    faces = np.flatnonzero(m2.face_label == code)
    kind = {LAGRANGE: "value", RAVIART_THOMAS: "normal", NEDELEC: "tangential"}[family]
    assert np.abs(face_trace(v, faces, kind).minus).max() <= 1e-12


@pytest.mark.parametrize("q", [1, 2, 3])
def test_curl_maps_nedelec_into_rt(m2, rng, q):
    ned = build_space(m2, NEDELEC, q)
    rt = build_space(m2, RAVIART_THOMAS, q)
    theta = Field(ned, rng.standard_normal(ned.ndofs))
    # interpolate curl theta elementwise into RT_q and compare pointwise
    coeffs = np.zeros(rt.ndofs)
    loc = fem.rt_functionals(m2, q, np.arange(m2.n_tets),
                             lambda el, x: theta.eval(el, x, "curl")[:, :, None, :])[..., 0]
    coeffs[rt.elem_dofs] = loc
    r = Field(rt, coeffs)
    elems = np.arange(m2.n_tets)
    x, _ = element_quadrature(m2, elems, 4)
    assert np.abs(r.eval(elems, x) - theta.eval(elems, x, "curl")).max() <= 1e-10 * np.abs(theta.coeffs).max()


@pytest.mark.parametrize("q", [1, 2, 3])
def test_divergence_theorem(m2, rng, q):
    rt = build_space(m2, RAVIART_THOMAS, q)
    v = Field(rt, rng.standard_normal(rt.ndofs))
    elems = np.arange(m2.n_tets)
    x, w = element_quadrature(m2, elems, 2 * q)
    total_div = np.einsum("eq,eq->", w, v.eval(elems, x, "div"))
    tr = face_trace(v, m2.boundary_faces, "normal")
    flux = np.einsum("fq,fq->", tr.w, tr.minus)
    assert total_div == pytest.approx(flux, abs=1e-12 * np.abs(v.coeffs).sum())


@pytest.mark.parametrize("family,degree", [(LAGRANGE, 3), (RAVIART_THOMAS, 2), (NEDELEC, 2), (BROKEN_SCALAR, 2),
                                           (BROKEN_VECTOR, 1)])
def test_interpolation_reproduces_polynomials(m2, family, degree):
    k = degree if family in (LAGRANGE, BROKEN_SCALAR, BROKEN_VECTOR) else degree - 1
    if family in (LAGRANGE, BROKEN_SCALAR):
        fn = lambda x: (1 + x[..., 0] - 2 * x[..., 1] + x[..., 2]) ** k  # noqa: E731
    else:
        fn = lambda x: np.stack([(x[..., 1] + 1) ** k, (x[..., 2] - x[..., 0]) ** k, 3 + 0 * x[..., 0]], -1)  # noqa: E731
    v = interpolate(build_space(m2, family, degree), fn)
    elems = np.arange(m2.n_tets)
    x, _ = element_quadrature(m2, elems, 3)
    assert np.abs(v.eval(elems, x) - fn(x)).max() <= 1e-12 * 10


# hat and edge functions ----------------------------------------------------------------------

def test_hat_functions(m2, rng):
    elems, x = random_points_in_tets(m2, 20, rng)
    total = sum(hat_function(m2, a).eval(elems, x) for a in range(m2.n_vertices))
    assert np.allclose(total, 1.0, atol=1e-12)
    for a in (0, 5, m2.n_vertices - 1):
        psi = hat_function(m2, a)
        assert psi.eval([m2.vertex_tets[a][0]], m2.vertices[a][None, None, :])[0, 0] == pytest.approx(1.0)
        assert np.all(np.abs(psi.eval(elems, x)) <= 1.0 + 1e-14)
        outside = np.setdiff1d(np.arange(m2.n_tets), m2.vertex_tets[a])
        xo, _ = element_quadrature(m2, outside, 2)
        assert np.abs(psi.eval(outside, xo)).max() == 0.0


def test_edge_moment_matrix(m1):
    ned = build_space(m1, NEDELEC, 1)
    x, w, _ = edge_quadrature(m1, np.arange(m1.n_edges), 2)
    tets = np.array([m1.edge_tets[e][0] for e in range(m1.n_edges)])
    M = np.zeros((m1.n_edges, m1.n_edges))
    for l in range(m1.n_edges):
        vals = edge_function(m1, l).eval(tets, x)
        M[:, l] = np.einsum("eq,eqc,ec->e", w, vals, m1.edge_tangents)
    assert np.allclose(M, np.diag(m1.edge_lengths), atol=1e-12)
    assert ned.ndofs == m1.n_edges


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_edge_functions_reproduce_constants(w):
    mesh = build_structured_cube(2)
    rng = np.random.default_rng(1)
    elems, x = random_points_in_tets(mesh, 20, rng)
    w = np.asarray(w)
    ned = build_space(mesh, NEDELEC, 1)
    v = Field(ned, mesh.edge_tangents @ w)
    assert np.allclose(v.eval(elems, x)[:, 0], w, atol=1e-11)


def test_edge_function_curl_piecewise_constant(m2):
    psi = edge_function(m2, 7)
    elems = m2.edge_tets[7]
    x, _ = element_quadrature(m2, elems, 3)
    c = psi.eval(elems, x, "curl")
    assert np.abs(c - c[:, :1]).max() <= 1e-12


# projection ------------------------------------------------------------------------------------

def test_projection_examples(m2):
    c = project_broken(m2, 2, lambda x: 3.0 + 0 * x[..., 0])
    elems = np.arange(m2.n_tets)
    x, w = element_quadrature(m2, elems, 2)
    assert np.allclose(c.eval(elems, x), 3.0)
    p = project_broken(m2, 1, lambda x: x[..., 0])
    assert np.allclose(p.eval(elems, x)[:, 0], m2.centroids[:, 0])


@pytest.mark.parametrize("q", [1, 2, 3])
def test_projection_orthogonality(m2, q):
    f = lambda x: np.sin(3 * x[..., 0]) * np.exp(x[..., 1]) + x[..., 2] ** 5  # noqa: E731
    proj = project_broken(m2, q, f)
    elems = np.arange(m2.n_tets)
    x, w = element_quadrature(m2, elems, 10)
    r = f(x) - proj.eval(elems, x)
    basis = proj.space.eval(elems, x)
    mom = np.einsum("eq,eq,eqb->eb", w, r, basis)
    assert np.abs(mom).max() <= 1e-12 * np.abs(np.einsum("eq,eq,eqb->eb", w, np.abs(f(x)), np.abs(basis))).max()


def test_projection_poincare_rate():
    f = lambda x: np.sin(np.pi * x[..., 0])  # noqa: E731
    err = []
    for n in (2, 4):
        mesh = build_structured_cube(n)
        proj = project_broken(mesh, 1, f)
        elems = np.arange(mesh.n_tets)
        x, w = element_quadrature(mesh, elems, 10)
        err.append(np.sqrt(np.einsum("eq,eq->", w, (f(x) - proj.eval(elems, x)) ** 2)))
    assert 1.6 <= err[0] / err[1] <= 2.4


# traces ----------------------------------------------------------------------------------------

def test_broken_jump_follows_side_convention(m2):
    space = build_space(m2, BROKEN_SCALAR, 0)
    v = Field(space, np.arange(m2.n_tets, dtype=float))  # constant on each tet, distinct values
    elems = np.arange(m2.n_tets)
    x, _ = element_quadrature(m2, elems, 0)
    vals = v.eval(elems, x)[:, 0]
    faces = m2.interior_faces
    tr = face_trace(v, faces)
    t0, t1 = m2.face_tets[faces, 0], m2.face_tets[faces, 1]
    assert np.allclose(tr.jump, (vals[t0] - vals[t1])[:, None])
    b = m2.boundary_faces
    trb = face_trace(v, b)
    assert np.allclose(trb.jump, trb.minus) and np.allclose(trb.average, trb.minus)


def test_trace_kind_errors(m2):
    lag = build_space(m2, LAGRANGE, 1)
    with pytest.raises(SpaceError):
        face_trace(Field(lag, np.zeros(lag.ndofs)), [0], "normal")


# coefficient ---------------------------------------------------------------------------------

def test_coefficient_bounds(m2):
    A = np.array([[2.0, 0.5, 0], [0.5, 1.0, 0], [0, 0, 3.0]])
    c = Coefficient.constant(m2, A)
    eig = np.linalg.eigvalsh(A)
    assert np.allclose(c.alpha_min, eig[0]) and np.allclose(c.alpha_max, eig[-1])
    with pytest.raises(ValueError):
        Coefficient.constant(m2, -np.eye(3))
    with pytest.raises(ValueError):
        Coefficient.constant(m2, np.array([[1.0, 2.0, 0], [0, 1.0, 0], [0, 0, 1.0]]))
