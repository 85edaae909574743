import json

import numpy as np
import pytest

from aposteriori3d import workbench as wb
from aposteriori3d.fem import BROKEN_VECTOR, build_space, element_quadrature, interpolate
from aposteriori3d.mesh import DIRICHLET, NEUMANN
from aposteriori3d.schemes import solve

from helpers import problem, solution

ANISO = [[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 1.5]]


def _boundary_points(mesh, label):
    faces = np.flatnonzero(mesh.face_label == label)
    return faces, mesh.vertices[mesh.faces[faces]].mean(1)


@pytest.mark.parametrize("case", ["quadratic_x", "sine3", "sine_mixed_bc"])
def test_manufactured_boundary_conditions(case):
    pr = problem(case, 2)
    mesh = pr.mesh
    faces, xd = _boundary_points(mesh, DIRICHLET)
    assert len(faces) > 0
    assert np.abs(pr.u(xd)).max() <= 1e-14
    faces, xn = _boundary_points(mesh, NEUMANN)
    if len(faces):
        flux = np.einsum("ij,fj,fi->f", pr.coefficient.A[0], pr.grad_u(xn), mesh.face_normals[faces])
        assert np.abs(flux).max() <= 1e-14


@pytest.mark.parametrize("case,A", [("sine3", ANISO), ("quadratic_x", [[2.0, 0, 0], [0, 1.0, 0], [0, 0, 3.0]])])
def test_load_matches_operator(case, A):
    """f = -div(A grad u), checked by central differences of A grad u."""
    pr = wb.manufactured_problem(case, 1, A)
    rng = np.random.default_rng(3)
    x = rng.uniform(0.1, 0.9, (20, 3))
    h = 1e-5
    div = np.zeros(len(x))
    for i in range(3):
        e = np.eye(3)[i] * h
        div += (pr.grad_u(x + e) @ np.asarray(A).T - pr.grad_u(x - e) @ np.asarray(A).T)[:, i] / (2 * h)
    assert np.allclose(pr.f(x), -div, atol=1e-6)


def test_neumann_case_needs_diagonal_coefficient():
    with pytest.raises(wb.WorkbenchError):
        wb.manufactured_problem("sine_mixed_bc", 2, ANISO)
    with pytest.raises(wb.WorkbenchError):
        wb.manufactured_problem("nonexistent", 2)
    with pytest.raises(wb.WorkbenchError):
        wb.coefficient_matrix([[1.0, 2.0, 0], [2.0, 1.0, 0], [0, 0, 1.0]])


def test_zero_study_is_all_zero():
    cfg = wb.StudyConfig(case="zero", n_list=[1, 2], scheme="ipdg", p=1,
                         estimators=["residual", "standard", "equilibrated", "alternative"])
    levels, text = wb.convergence_study(cfg)
    for lv in levels:
        assert lv.error.total == 0.0
        assert all(rep.total_with_oscillation == 0.0 for rep in lv.reports.values())
        assert lv.reports["equilibrated"].metadata["guaranteed"] is True
    header, *rows = [line.split(",") for line in text.strip().splitlines()]
    eta_cols = [i for i, h in enumerate(header) if h.endswith("_eta")]
    assert all(float(r[i]) == 0.0 for r in rows for i in eta_cols)


def test_study_csv_layout_and_determinism(tmp_path):
    cfg = wb.StudyConfig(case="sine3", n_list=[1, 2], scheme="mixed", p=1, estimators=["residual", "equilibrated"])
    _, first = wb.convergence_study(cfg, tmp_path / "a")
    _, second = wb.convergence_study(cfg, tmp_path / "b")
    assert first == second
    assert (tmp_path / "a" / "study.csv").read_bytes() == (tmp_path / "b" / "study.csv").read_bytes()
    header = first.splitlines()[0].split(",")
    assert header[:5] == ["level", "n", "h", "dofs", "error"]
    assert "equilibrated_guaranteed" in header and "residual_effectivity" in header
    assert not any("second" in h for h in header)
    timings = (tmp_path / "a" / "timings.csv").read_text().splitlines()
    assert timings[0].startswith("level,n,") and len(timings) == 3


def test_config_validation_and_roundtrip(tmp_path):
    cfg = wb.StudyConfig(case="sine3", n_list=[2, 4], scheme="ipdg", p=2, beta=20.0,
                         estimators=["standard"], coefficient=ANISO)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert wb.StudyConfig.load(path) == cfg
    bad = [dict(case="nope"), dict(scheme="hdg"), dict(n_list=[]), dict(n_list=[4, 2]),
           dict(scheme="mixed", estimators=["standard"]), dict(scheme="conforming", estimators=["residual"]),
           dict(estimators=["magic"]), dict(error_quad_degree=2), dict(coefficient=-1.0)]
    for kw in bad:
        with pytest.raises(wb.WorkbenchError):
            wb.StudyConfig(**kw)
    with pytest.raises(wb.WorkbenchError):
        wb.StudyConfig.from_json(json.dumps({"case": "sine3", "colour": "red"}))
    with pytest.raises(wb.WorkbenchError):
        wb.StudyConfig.from_json("[1, 2]")


def test_vtk_export(tmp_path):
    mesh = wb.case_mesh("sine3", 1)
    path = wb.export_vtk(mesh, tmp_path / "m.vtk", {"eta": np.arange(6.0), "g": np.ones((6, 3))},
                         {"u": np.zeros(8)})
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DATASET UNSTRUCTURED_GRID" in lines
    assert wb.read_vtk_counts(path) == (8, 6)
    types = lines[lines.index("CELL_TYPES 6") + 1:][:6]
    assert types == ["10"] * 6
    assert "SCALARS eta double 1" in lines and "VECTORS g double" in lines and "POINT_DATA 8" in lines
    with pytest.raises(wb.WorkbenchError):
        wb.export_vtk(mesh, tmp_path / "bad.vtk", {"eta": np.zeros(5)})


def test_prager_synge_with_exact_gradient():
    pr = problem("quadratic_x", 2)
    G = interpolate(build_space(pr.mesh, BROKEN_VECTOR, 1), pr.grad_u)
    rep = wb.prager_synge_check(pr, G, 3, p=2)
    assert rep.error2 <= 1e-16
    assert rep.term1 <= 1e-16 and rep.term2 <= 1e-16
    assert rep.identity_residual <= 1e-11


def test_prager_synge_discrete_gradient():
    pr = problem("sine3", 2)
    out = solution("sine3", "ipdg", 1, 2)
    rep = wb.prager_synge_check(pr, out.gradient, 3, p=1)
    assert rep.one_sided()
    assert rep.identity_residual <= 1e-11
    assert rep.term1 > 0 and rep.term2 > 0
    with pytest.raises(wb.WorkbenchError):
        wb.prager_synge_check(pr, out.gradient, 1, p=1)


def test_error_measures():
    pr = problem("sine3", 2)
    ip = solution("sine3", "ipdg", 1, 2)
    mx = solution("sine3", "mixed", 1, 2)
    cf = solution("sine3", "conforming", 1, 2)
    # for a conforming solution the three gradient-based measures coincide
    e1 = wb.exact_error(pr, cf, "ipdg_energy").total
    e2 = wb.exact_error(pr, cf, "broken_gradient").total
    assert e1 == pytest.approx(e2, rel=1e-10)
    # mixed flux error equals the energy error of -A^-1 sigma (A = I)
    elems = np.arange(pr.mesh.n_tets)
    x, w = element_quadrature(pr.mesh, elems, 10)
    d = pr.grad_u(x) - mx.gradient.eval(elems, x)
    assert wb.exact_error(pr, mx).total == pytest.approx(np.sqrt(np.einsum("eq,eqi,eqi->", w, d, d)), rel=1e-10)
    assert wb.exact_error(pr, ip).measure == "ipdg_energy"
    for bad in (("mixed_flux", ip), ("ipdg_energy", mx), ("broken_gradient", mx), ("l2", ip)):
        with pytest.raises(wb.WorkbenchError):
            wb.exact_error(pr, bad[1], bad[0])


def test_rates_helper():
    assert wb.rates([4.0, 2.0, 1.0]) == [2.0, 2.0]
    assert wb.rates([1.0, 0.0]) == [np.inf]


def test_cell_averages():
    pr = problem("quadratic_x", 1)
    out = solve(pr, "conforming", 2)
    avg = wb.cell_averages(out.gradient)
    assert avg.shape == (6, 3)
    assert np.allclose(avg[:, 1:], 0.0, atol=1e-12)
