"""Manufactured problems, exact errors, Prager-Synge checks, convergence
studies and file output (CSV, legacy VTK, JSON configuration)."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import fem
from .assembly import assemble
from .est_alt import estimate_alternative
from .est_equilibrated import estimate_equilibrated, mark_guaranteed, potential_mismatch2
from .est_residual import estimate_residual_ipdg, estimate_residual_mixed, estimate_standard_ipdg
from .fem import LAGRANGE, RAVIART_THOMAS, Coefficient, Field, element_quadrature
from .mesh import Mesh, build_structured_cube
from .quadrature import DATA_DEGREE
from .report import EstimatorReport
from .schemes import Problem, SchemeOutput, solve
from .solvers import DEFAULT_TOL, solve_saddle, solve_spd

CASES = ("zero", "quadratic_x", "sine3", "sine_mixed_bc")
SCHEMES = ("conforming", "ipdg", "mixed")
ESTIMATORS = ("residual", "standard", "equilibrated", "alternative")
ALLOWED = {
    "conforming": ("alternative",),
    "ipdg": ESTIMATORS,
    "mixed": ("residual", "equilibrated", "alternative"),
}
CASE_BC = {
    "zero": "D",
    "quadratic_x": {"x0": "D", "x1": "D", "y0": "N", "y1": "N", "z0": "N", "z1": "N"},
    "sine3": "D",
    "sine_mixed_bc": {"x0": "N", "x1": "N"},
}
ERROR_MEASURES = ("ipdg_energy", "mixed_flux", "broken_gradient")


class WorkbenchError(ValueError):
    pass


# manufactured problems --------------------------------------------------------------------

def _sine_parts(x, shift_x: bool):
    """Value, gradient and Hessian of prod sin(pi x_i), with cos in x when shift_x."""
    pi = np.pi
    s, c = np.sin(pi * x), np.cos(pi * x)
    fx, dfx, ddfx = (c[..., 0], -pi * s[..., 0], -pi ** 2 * c[..., 0]) if shift_x else \
        (s[..., 0], pi * c[..., 0], -pi ** 2 * s[..., 0])
    fy, dfy, ddfy = s[..., 1], pi * c[..., 1], -pi ** 2 * s[..., 1]
    fz, dfz, ddfz = s[..., 2], pi * c[..., 2], -pi ** 2 * s[..., 2]
    u = fx * fy * fz
    g = np.stack([dfx * fy * fz, fx * dfy * fz, fx * fy * dfz], -1)
    H = np.stack([
        np.stack([ddfx * fy * fz, dfx * dfy * fz, dfx * fy * dfz], -1),
        np.stack([dfx * dfy * fz, fx * ddfy * fz, fx * dfy * dfz], -1),
        np.stack([dfx * fy * dfz, fx * dfy * dfz, fx * fy * ddfz], -1),
    ], -2)
    return u, g, H


def _exact(name: str):
    """(u, grad u, Hessian u) as callables on points (..., 3)."""
    if name == "zero":
        return (lambda x: np.zeros(x.shape[:-1]), lambda x: np.zeros(x.shape),
                lambda x: np.zeros(x.shape + (3,)))
    if name == "quadratic_x":
        def hess(x):
            H = np.zeros(x.shape + (3,))
            H[..., 0, 0] = -2.0
            return H
        return (lambda x: x[..., 0] * (1.0 - x[..., 0]),
                lambda x: np.stack([1.0 - 2.0 * x[..., 0], np.zeros(x.shape[:-1]), np.zeros(x.shape[:-1])], -1),
                hess)
    if name in ("sine3", "sine_mixed_bc"):
        shift = name == "sine_mixed_bc"
        return (lambda x: _sine_parts(x, shift)[0], lambda x: _sine_parts(x, shift)[1],
                lambda x: _sine_parts(x, shift)[2])
    raise WorkbenchError(f"unknown manufactured case {name!r}; choose from {', '.join(CASES)}")


def coefficient_matrix(spec) -> np.ndarray:
    """A constant SPD matrix from None (identity), a scalar or a 3x3 nested list."""
    m = np.eye(3) if spec is None else np.asarray(spec, dtype=float)
    if m.ndim == 0:
        m = float(m) * np.eye(3)
    if m.shape != (3, 3) or not np.allclose(m, m.T) or np.linalg.eigvalsh(m)[0] <= 0:
        raise WorkbenchError("coefficient must be a positive scalar or a symmetric positive definite 3x3 matrix")
    return m


def case_mesh(name: str, n: int) -> Mesh:
    if name not in CASE_BC:
        raise WorkbenchError(f"unknown manufactured case {name!r}")
    return build_structured_cube(n, CASE_BC[name])


def manufactured_problem(name: str, mesh: Mesh | int, A=None) -> Problem:
    """Problem with exact solution; ``mesh`` may be a resolution n, in which case the
    unit-cube mesh with the boundary partition of the case is built.

    A constant coefficient A gives f = -tr(A Hess u).  Cases with Neumann faces
    need A diagonal so that A grad u . n still vanishes there.
    """
    u, gu, hess = _exact(name)
    if isinstance(mesh, (int, np.integer)):
        mesh = case_mesh(name, int(mesh))
    Am = coefficient_matrix(A)
    if CASE_BC[name] != "D" and np.any(Am != np.diag(np.diag(Am))):
        raise WorkbenchError(f"case {name!r} has Neumann faces and needs a diagonal coefficient")
    coef = Coefficient.constant(mesh, Am)

    def f(x):
        return -np.einsum("ij,...ij->...", Am, hess(x))

    return Problem(mesh, coef, f, u, gu, name)


# exact errors ----------------------------------------------------------------------------------

@dataclass
class ErrorReport:
    measure: str
    per_element: np.ndarray  # squared
    total: float  # norm

    @property
    def total2(self) -> float:
        return float(self.per_element.sum())


def default_measure(scheme: str) -> str:
    return {"ipdg": "ipdg_energy", "mixed": "mixed_flux", "conforming": "broken_gradient"}[scheme]


def exact_error(problem: Problem, output: SchemeOutput, measure: str | None = None,
                quad_degree: int = DATA_DEGREE) -> ErrorReport:
    """Per-element squared error and global norm.

    ipdg_energy: ||grad u - G_h(u_h)||_A (the lifting of the exact solution vanishes);
    mixed_flux: ||A grad u + sigma_h||_{A^-1}; broken_gradient: ||grad u - grad_h u_h||_A.
    """
    if not problem.has_exact:
        raise WorkbenchError("exact error needs an exact solution")
    measure = default_measure(output.scheme) if measure is None else measure
    if measure not in ERROR_MEASURES:
        raise WorkbenchError(f"unknown error measure {measure!r}")
    if quad_degree < DATA_DEGREE:
        raise WorkbenchError(f"error quadrature must be exact to degree >= {DATA_DEGREE}")
    mesh, coef = problem.mesh, problem.coefficient
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, quad_degree)
    gu = problem.grad_u(x)
    if measure == "ipdg_energy":
        if output.scheme not in ("ipdg", "conforming"):
            raise WorkbenchError("ipdg_energy needs an IPDG or conforming solution")
        r = gu - output.gradient.eval(elems, x)
        e2 = np.einsum("eq,eqi,eij,eqj->e", w, r, coef.A, r)
    elif measure == "mixed_flux":
        if output.scheme != "mixed":
            raise WorkbenchError("mixed_flux needs a mixed solution")
        r = np.einsum("eij,eqj->eqi", coef.A, gu) + output.primary.eval(elems, x)
        e2 = np.einsum("eq,eqi,eij,eqj->e", w, r, coef.Ainv, r)
    else:
        if output.scheme == "mixed":
            raise WorkbenchError("broken_gradient needs a scalar primal solution")
        r = gu - output.primary.eval(elems, x, "grad")
        e2 = np.einsum("eq,eqi,eij,eqj->e", w, r, coef.A, r)
    return ErrorReport(measure, e2, float(np.sqrt(e2.sum())))


def local_efficiency(report: EstimatorReport, error2: np.ndarray, neighbourhood: Callable[[int], np.ndarray]) -> np.ndarray:
    """eta_K / ||error||_{neighbourhood(K)} per element (inf where the error vanishes)."""
    eta = np.sqrt(report.eta2)
    den = np.sqrt(np.array([error2[neighbourhood(k)].sum() for k in range(len(eta))]))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, eta / den, np.where(eta > 0, np.inf, 0.0))


# Prager-Synge check ------------------------------------------------------------------------------

@dataclass
class PragerSyngeReport:
    """error2 against the flux and potential terms of the Prager-Synge identity.

    Both terms are minimised over discrete admissible sets and so over-estimate
    the exact minima: term2 by a conforming Lagrange solve, term1 by a
    divergence-free RT correction of the exact flux.  Hence error2 <= term1 + term2.
    """

    error2: float
    term1: float
    term2: float
    sigma_star_norm: float  # ||A(grad s* - G)||_{A^-1}
    potential_norm: float  # ||G - grad s*||_A
    oracle_degree: int
    curl_bound: float | None = None  # ||G - phi_h||_A^2 when a curl-free field is given

    @property
    def defect(self) -> float:
        """error2 - (term1 + term2); non-positive when the check passes."""
        return self.error2 - (self.term1 + self.term2)

    @property
    def relative_defect(self) -> float:
        return abs(self.defect) / self.error2 if self.error2 > 0 else abs(self.defect)

    @property
    def identity_residual(self) -> float:
        n = max(self.sigma_star_norm, self.potential_norm)
        return abs(self.sigma_star_norm - self.potential_norm) / n if n > 0 else 0.0

    def one_sided(self, rel_tol: float = 1e-8) -> bool:
        return self.error2 <= self.term1 + self.term2 + rel_tol * self.error2


def _lagrange_potential(problem: Problem, G: Field, k: int):
    """s* in Lagrange_k with (A grad s, grad v) = (A G, grad v) for v vanishing on Gamma_D."""
    mesh, coef = problem.mesh, problem.coefficient
    space = fem.build_space(mesh, LAGRANGE, k, "D")
    K = assemble("stiffness", space, coefficient=coef)
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, k + G.space.degree + 2)
    AG = np.einsum("eij,eqj->eqi", coef.A, G.eval(elems, x))
    loc = np.einsum("eq,eqi,eqbi->eb", w, AG, space.eval(elems, x, "grad"))
    b = np.zeros(space.ndofs)
    np.add.at(b, space.elem_dofs, loc)
    s = np.zeros(space.ndofs)
    s[space.free], _ = solve_spd(K[space.free][:, space.free], b[space.free])
    return Field(space, s)


def _mixed_flux_term(problem: Problem, G: Field, k: int) -> tuple[float, np.ndarray]:
    """Upper bound of min ||G + A^-1 sigma||_A^2 over div sigma = f.

    Admissible fluxes sigma = -A grad u + tau with tau in RT_k (zero normal
    trace on Gamma_N) and div tau = 0 satisfy div sigma = f exactly, so the
    minimum over tau over-estimates the continuous minimum without any load
    oscillation remainder.  Returns the bound and the coefficients of tau.
    """
    mesh, coef = problem.mesh, problem.coefficient
    rt = fem.build_space(mesh, RAVIART_THOMAS, k, "N")
    ps = fem.build_space(mesh, fem.BROKEN_SCALAR, k - 1)
    M = assemble("weightedmass", rt, coefficient=coef, weight="Ainv")
    B = assemble("div-pairing", rt, ps)
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, DATA_DEGREE)
    d = G.eval(elems, x) - problem.grad_u(x)
    loc = np.einsum("eq,eqi,eqbi->eb", w, d, rt.eval(elems, x))
    rhs = np.zeros(rt.ndofs)
    np.add.at(rhs, rt.elem_dofs, loc)
    fr = rt.free
    t, _, _ = solve_saddle(M[fr][:, fr], B[:, fr], -rhs[fr], np.zeros(ps.ndofs), DEFAULT_TOL)
    tau = np.zeros(rt.ndofs)
    tau[fr] = t
    r = d + np.einsum("eij,eqj->eqi", coef.Ainv, Field(rt, tau).eval(elems, x))
    return float(np.einsum("eq,eqi,eij,eqj->", w, r, coef.A, r)), tau


def prager_synge_check(problem: Problem, G: Field, oracle_degree: int, phi: Field | None = None,
                       p: int | None = None) -> PragerSyngeReport:
    """Evaluate both Prager-Synge terms with discrete oracles of the given degree."""
    if not problem.has_exact:
        raise WorkbenchError("the Prager-Synge check needs an exact solution")
    p = G.space.degree + 1 if p is None else p
    if oracle_degree < p + 1 or oracle_degree > fem.MAX_DEGREE[RAVIART_THOMAS]:
        raise WorkbenchError(f"oracle degree must lie in [{p + 1}, {fem.MAX_DEGREE[RAVIART_THOMAS]}]")
    mesh, coef = problem.mesh, problem.coefficient
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, DATA_DEGREE)
    r = problem.grad_u(x) - G.eval(elems, x)
    error2 = float(np.einsum("eq,eqi,eij,eqj->", w, r, coef.A, r))
    s = _lagrange_potential(problem, G, oracle_degree)
    xq, wq = element_quadrature(mesh, elems, 2 * max(oracle_degree, G.space.degree) + 2)
    d = s.eval(elems, xq, "grad") - G.eval(elems, xq)
    sigma_star = np.einsum("eij,eqj->eqi", coef.A, d)
    pot = float(np.sqrt(np.einsum("eq,eqi,eij,eqj->", wq, d, coef.A, d)))
    sst = float(np.sqrt(np.einsum("eq,eqi,eij,eqj->", wq, sigma_star, coef.Ainv, sigma_star)))
    term1, _ = _mixed_flux_term(problem, G, oracle_degree)
    curl = float(potential_mismatch2(problem, phi, G).sum()) if phi is not None else None
    return PragerSyngeReport(error2, term1, pot ** 2, sst, pot, oracle_degree, curl)


# studies -----------------------------------------------------------------------------------------

@dataclass
class StudyConfig:
    case: str = "sine3"
    n_list: list = field(default_factory=lambda: [2, 4])
    scheme: str = "ipdg"
    p: int = 1
    beta: float = 10.0
    estimators: list = field(default_factory=lambda: ["residual", "equilibrated"])
    coefficient: object = None
    lifting_degree: int | None = None
    error_quad_degree: int = DATA_DEGREE
    out_dir: str | None = None
    csv_name: str = "study.csv"
    timings_name: str = "timings.csv"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.case not in CASES:
            raise WorkbenchError(f"unknown case {self.case!r}")
        if self.scheme not in SCHEMES:
            raise WorkbenchError(f"unknown scheme {self.scheme!r}")
        if not self.n_list or any(int(n) < 1 for n in self.n_list):
            raise WorkbenchError("n_list must hold positive resolutions")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise WorkbenchError("n_list must be strictly increasing")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise WorkbenchError(f"unknown estimator {e!r}")
            if e not in ALLOWED[self.scheme]:
                raise WorkbenchError(f"estimator {e!r} is not available for scheme {self.scheme!r}")
        if self.error_quad_degree < DATA_DEGREE:
            raise WorkbenchError(f"error quadrature must be exact to degree >= {DATA_DEGREE}")
        coefficient_matrix(self.coefficient)

    @classmethod
    def from_json(cls, text: str) -> "StudyConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise WorkbenchError("configuration must be a JSON object")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise WorkbenchError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "StudyConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def run_estimator(name: str, problem: Problem, output: SchemeOutput) -> EstimatorReport:
    if name not in ALLOWED[output.scheme]:
        raise WorkbenchError(f"estimator {name!r} is not available for scheme {output.scheme!r}")
    if name == "residual":
        return estimate_residual_ipdg(problem, output) if output.scheme == "ipdg" else \
            estimate_residual_mixed(problem, output)
    if name == "standard":
        return estimate_standard_ipdg(problem, output)
    if name == "equilibrated":
        return estimate_equilibrated(problem, output)
    return estimate_alternative(problem, output)


def _dofs(output: SchemeOutput) -> int:
    n = output.primary.space.ndofs
    if output.scheme == "mixed":
        n += output.aux["multiplier"].space.ndofs
    return int(n)


@dataclass
class StudyLevel:
    n: int
    h: float
    dofs: int
    error: ErrorReport
    reports: dict
    timings: dict


def run_level(config: StudyConfig, n: int) -> StudyLevel:
    problem = manufactured_problem(config.case, n, config.coefficient)
    timings = {}
    t = time.perf_counter()
    output = solve(problem, config.scheme, config.p, config.beta, config.lifting_degree)
    timings["solve"] = time.perf_counter() - t
    err = exact_error(problem, output, quad_degree=config.error_quad_degree)
    reports = {}
    for name in config.estimators:
        t = time.perf_counter()
        rep = run_estimator(name, problem, output).with_error(err.per_element)
        if name == "equilibrated":
            mark_guaranteed(rep, err.total2)
        reports[name] = rep
        timings[name] = time.perf_counter() - t
    return StudyLevel(n, float(problem.mesh.diameters.max()), _dofs(output), err, reports, timings)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def study_rows(config: StudyConfig, levels: list[StudyLevel]):
    """Header and rows of the study table; estimator columns follow config order."""
    header = ["level", "n", "h", "dofs", "error"]
    for name in config.estimators:
        rep = levels[0].reports[name]
        header += [f"{name}_eta", f"{name}_bound"]
        header += [f"{name}_{t}" for t in rep.terms]
        header += [f"{name}_effectivity"]
        if name == "equilibrated":
            header += ["equilibrated_rigorous_bound", "equilibrated_guaranteed"]
    rows = []
    for i, lv in enumerate(levels):
        row = [i, lv.n, lv.h, lv.dofs, lv.error.total]
        for name in config.estimators:
            rep = lv.reports[name]
            bound = np.sqrt(rep.total_with_oscillation)
            eff = bound / lv.error.total if lv.error.total > 0 else (0.0 if bound == 0 else np.inf)
            row += [rep.eta, bound] + [np.sqrt(rep.term_total(t)) for t in rep.terms] + [eff]
            if name == "equilibrated":
                row += [np.sqrt(rep.metadata["rigorous_bound"]), rep.metadata["guaranteed"]]
        rows.append([_fmt(v) for v in row])
    return header, rows


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def convergence_study(config: StudyConfig, out_dir=None) -> tuple[list[StudyLevel], str]:
    """Run every level; write the study CSV (and a separate timings CSV) when an
    output directory is given.  Returns the levels and the CSV text."""
    levels = [run_level(config, int(n)) for n in config.n_list]
    header, rows = study_rows(config, levels)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows([header] + rows)
    out_dir = config.out_dir if out_dir is None else out_dir
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / config.csv_name).write_text(buf.getvalue(), encoding="utf-8")
        keys = sorted({k for lv in levels for k in lv.timings})
        write_csv(out / config.timings_name, ["level", "n"] + [f"{k}_seconds" for k in keys],
                  [[str(i), str(lv.n)] + [f"{lv.timings.get(k, 0.0):.6f}" for k in keys]
                   for i, lv in enumerate(levels)])
    return levels, buf.getvalue()


def rates(values: list[float]) -> list[float]:
    """Successive reduction factors values[i] / values[i+1]."""
    return [a / b if b > 0 else np.inf for a, b in zip(values, values[1:])]


# file output ------------------------------------------------------------------------------------

VTK_HEADER = "# vtk DataFile Version 3.0"
VTK_TETRA = 10


def export_vtk(mesh: Mesh, path, cell_data: dict | None = None, point_data: dict | None = None,
               title: str = "aposteriori3d") -> Path:
    """Legacy ASCII unstructured grid; scalar (T,) or vector (T, 3) cell arrays."""
    cell_data = cell_data or {}
    point_data = point_data or {}
    lines = [VTK_HEADER, title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [" ".join(_fmt(c) for c in v) for v in mesh.vertices]
    lines.append(f"CELLS {mesh.n_tets} {5 * mesh.n_tets}")
    lines += ["4 " + " ".join(str(int(i)) for i in t) for t in mesh.tets]
    lines.append(f"CELL_TYPES {mesh.n_tets}")
    lines += [str(VTK_TETRA)] * mesh.n_tets

    def block(kind, count, data):
        out = [f"{kind} {count}"] if data else []
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != count:
                raise WorkbenchError(f"array {name!r} has {arr.shape[0]} entries, expected {count}")
            safe = "".join(ch if ch.isalnum() or ch in "_-" else "_" for ch in name)
            if arr.ndim == 1:
                out += [f"SCALARS {safe} double 1", "LOOKUP_TABLE default"] + [_fmt(v) for v in arr]
            elif arr.ndim == 2 and arr.shape[1] == 3:
                out += [f"VECTORS {safe} double"] + [" ".join(_fmt(c) for c in v) for v in arr]
            else:
                raise WorkbenchError(f"array {name!r} must be scalar or 3-vector valued")
        return out

    lines += block("CELL_DATA", mesh.n_tets, cell_data)
    lines += block("POINT_DATA", mesh.n_vertices, point_data)
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_vtk_counts(path) -> tuple[int, int]:
    """(points, cells) declared in a legacy VTK file."""
    npts = ncells = -1
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("POINTS"):
            npts = int(line.split()[1])
        elif line.startswith("CELLS"):
            ncells = int(line.split()[1])
    return npts, ncells


def cell_averages(field: Field, degree: int = 4) -> np.ndarray:
    """Elementwise mean of a field (scalar or vector) for cell output."""
    mesh = field.mesh
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, degree)
    v = field.eval(elems, x)
    return np.einsum("eq,eq...->e...", w, v) / mesh.volumes.reshape((-1,) + (1,) * (v.ndim - 2))


def diagnostics_rows(log) -> tuple[list[str], list[list[str]]]:
    header = ["stage", "center", "rank", "nullspace_dim", "constraint_residual", "stationarity_residual"]
    rows = [[r["stage"], str(r["center"]), str(r["rank"]), str(r["nullspace_dim"]),
             _fmt(r["constraint_residual"]), _fmt(r["stationarity_residual"])] for r in log.records]
    return header, rows


__all__ = ["CASES", "SCHEMES", "ESTIMATORS", "manufactured_problem", "case_mesh", "exact_error", "ErrorReport",
           "PragerSyngeReport", "prager_synge_check", "StudyConfig", "convergence_study", "run_level",
           "run_estimator", "study_rows", "export_vtk", "read_vtk_counts", "cell_averages", "rates",
           "local_efficiency", "WorkbenchError", "coefficient_matrix", "diagnostics_rows", "write_csv"]
