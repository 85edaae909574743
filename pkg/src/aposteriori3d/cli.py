"""Command-line interface: mesh-info, solve, estimate, check-ps, study.

Exit codes: 0 success, 1 usage error, 2 failed invariant check.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import workbench as wb
from .est_equilibrated import curl_free_potential
from .mesh import MeshError, save_ascii
from .schemes import galerkin_residual, solve
from .solvers import SolverError

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT = 0, 1, 2
LOCAL_TOL = 1e-9


class UsageError(Exception):
    pass


class InvariantFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, study: bool = False) -> None:
    p.add_argument("--config", help="JSON study configuration; flags override its keys")
    p.add_argument("--out", help="output directory")
    p.add_argument("--case", choices=wb.CASES)
    p.add_argument("--scheme", choices=wb.SCHEMES)
    p.add_argument("--p", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--n", help="comma-separated resolutions" if study else "mesh resolution")
    p.add_argument("--estimators", help="comma-separated subset of " + ",".join(wb.ESTIMATORS))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aposteriori3d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("mesh-info", help="mesh statistics and topology checks"))
    _common(sub.add_parser("solve", help="solve a manufactured problem and report the exact error"))
    _common(sub.add_parser("estimate", help="evaluate estimators on one mesh"))
    ps = sub.add_parser("check-ps", help="numerical Prager-Synge check for the discrete gradient")
    _common(ps)
    ps.add_argument("--oracle", type=int, help="oracle degree (default max(p + 1, 2))")
    _common(sub.add_parser("study", help="convergence and effectivity study"), study=True)
    return parser


def _config(args, single_level: bool) -> wb.StudyConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read configuration: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("configuration must be a JSON object")
    for key in ("case", "scheme", "p", "beta"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.n is not None:
        try:
            data["n_list"] = [int(v) for v in args.n.split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(f"--n expects integers: {args.n!r}") from exc
    if args.estimators is not None:
        data["estimators"] = [e.strip() for e in args.estimators.split(",") if e.strip()]
    if args.out is not None:
        data["out_dir"] = args.out
    if "estimators" not in data:
        scheme = data.get("scheme", "ipdg")
        allowed = wb.ALLOWED.get(scheme, ())
        data["estimators"] = [e for e in ("residual", "equilibrated") if e in allowed] or list(allowed)
    try:
        cfg = wb.StudyConfig(**data)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    if single_level and len(cfg.n_list) != 1:
        raise UsageError("this command takes a single resolution --n")
    return cfg


def _out_dir(cfg: wb.StudyConfig) -> Path | None:
    if cfg.out_dir is None:
        return None
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_mesh_info(cfg: wb.StudyConfig) -> int:
    mesh = wb.case_mesh(cfg.case, cfg.n_list[0])
    vol = float(mesh.volumes.sum())
    chi = mesh.euler_characteristic()
    print(f"vertices {mesh.n_vertices}\nedges {mesh.n_edges}\nfaces {mesh.n_faces}\ntets {mesh.n_tets}")
    print(f"boundary_faces {len(mesh.boundary_faces)}")
    print(f"volume {vol:.17g}\neuler_characteristic {chi}")
    print(f"max_shape_regularity {float(mesh.shape_regularity.max()):.17g}")
    out = _out_dir(cfg)
    if out is not None:
        save_ascii(mesh, out / "mesh.txt")
        wb.export_vtk(mesh, out / "mesh.vtk", {"region": mesh.regions.astype(float)})
    if abs(vol - 1.0) > 1e-12 or chi != 1 or np.any(mesh.volumes <= 0):
        raise InvariantFailure("mesh invariants violated")
    return EXIT_OK


def _solve(cfg: wb.StudyConfig):
    problem = wb.manufactured_problem(cfg.case, cfg.n_list[0], cfg.coefficient)
    output = solve(problem, cfg.scheme, cfg.p, cfg.beta, cfg.lifting_degree)
    return problem, output


def cmd_solve(cfg: wb.StudyConfig) -> int:
    problem, output = _solve(cfg)
    err = wb.exact_error(problem, output, quad_degree=cfg.error_quad_degree)
    print(f"scheme {cfg.scheme}\np {cfg.p}\nn {cfg.n_list[0]}")
    print(f"solver_residual {output.info.residual:.3e}")
    print(f"error_{err.measure} {err.total:.17g}")
    out = _out_dir(cfg)
    if out is not None:
        wb.export_vtk(problem.mesh, out / "solution.vtk",
                      {"error2": err.per_element, "gradient": wb.cell_averages(output.gradient)})
    if cfg.scheme != "mixed":
        g = galerkin_residual(problem, output.gradient)
        print(f"galerkin_residual {g:.3e}")
        if g > LOCAL_TOL:
            raise InvariantFailure(f"Galerkin orthogonality residual {g:.3e} exceeds {LOCAL_TOL:g}")
    return EXIT_OK


def cmd_estimate(cfg: wb.StudyConfig) -> int:
    level = wb.run_level(cfg, cfg.n_list[0])
    mesh_n = level.n
    print(f"n {mesh_n}\ndofs {level.dofs}\nerror {level.error.total:.17g}")
    failures = []
    for name, rep in level.reports.items():
        print(f"{name}_eta {rep.eta:.17g}")
        for t in rep.terms:
            print(f"{name}_{t} {np.sqrt(rep.term_total(t)):.17g}")
        if name == "equilibrated":
            print(f"equilibrated_guaranteed {rep.metadata['guaranteed']}")
            if not rep.metadata["guaranteed"]:
                failures.append("equilibrated bound not guaranteed")
        log = _log(rep)
        if log is not None and log.records:
            worst = log.max_residual()
            print(f"{name}_max_local_residual {worst:.3e}")
            if worst > LOCAL_TOL:
                failures.append(f"{name} local constraint residual {worst:.3e}")
    out = _out_dir(cfg)
    if out is not None:
        _write_estimates(out, cfg, level)
    if failures:
        raise InvariantFailure("; ".join(failures))
    return EXIT_OK


def _log(rep):
    if rep.family == "equilibrated":
        return rep.metadata["reconstruction"].log
    if rep.family == "alternative":
        return rep.metadata["fluxes"].log
    return None


def _write_estimates(out: Path, cfg: wb.StudyConfig, level) -> None:
    mesh = wb.case_mesh(cfg.case, level.n)
    cells = {"error2": level.error.per_element}
    header = ["element", "error2"]
    cols = [level.error.per_element]
    for name, rep in level.reports.items():
        for t, v in rep.terms.items():
            cells[f"{name}_{t}"] = v
            header.append(f"{name}_{t}")
            cols.append(v)
    rows = [[str(k)] + [wb._fmt(c[k]) for c in cols] for k in range(mesh.n_tets)]
    wb.write_csv(out / "estimates.csv", header, rows)
    wb.export_vtk(mesh, out / "estimate.vtk", cells)
    diag_rows = []
    for name, rep in level.reports.items():
        log = _log(rep)
        if log is not None:
            h, r = wb.diagnostics_rows(log)
            diag_rows += [[name] + row for row in r]
    if diag_rows:
        wb.write_csv(out / "patch_diagnostics.csv", ["estimator"] + h, diag_rows)


def cmd_check_ps(cfg: wb.StudyConfig, oracle: int | None) -> int:
    if cfg.scheme == "conforming" and oracle is None:
        oracle = cfg.p + 1
    oracle = max(cfg.p + 1, 2) if oracle is None else oracle
    problem, output = _solve(cfg)
    phi = curl_free_potential(problem, output.gradient).phi if cfg.scheme != "conforming" else None
    rep = wb.prager_synge_check(problem, output.gradient, oracle, phi=phi, p=cfg.p)
    values = {"oracle_degree": rep.oracle_degree, "error2": rep.error2, "term1": rep.term1, "term2": rep.term2,
              "defect": rep.defect, "relative_defect": rep.relative_defect,
              "identity_residual": rep.identity_residual}
    if rep.curl_bound is not None:
        values["curl_bound"] = rep.curl_bound
    for k, v in values.items():
        print(f"{k} {wb._fmt(v)}")
    out = _out_dir(cfg)
    if out is not None:
        wb.write_csv(out / "prager_synge.csv", list(values), [[wb._fmt(v) for v in values.values()]])
    if not rep.one_sided():
        raise InvariantFailure("error^2 exceeds term1 + term2")
    if rep.identity_residual > 1e-11:
        raise InvariantFailure(f"sigma* norm identity residual {rep.identity_residual:.3e}")
    return EXIT_OK


def cmd_study(cfg: wb.StudyConfig) -> int:
    levels, text = wb.convergence_study(cfg)
    if cfg.out_dir is None:
        sys.stdout.write(text)
    else:
        print(f"wrote {Path(cfg.out_dir) / cfg.csv_name}")
    bad = [lv.n for lv in levels if "equilibrated" in lv.reports
           and not lv.reports["equilibrated"].metadata["guaranteed"]]
    if bad:
        raise InvariantFailure(f"equilibrated bound not guaranteed at n = {bad}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args, single_level=args.command != "study")
        if args.command == "mesh-info":
            return cmd_mesh_info(cfg)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "estimate":
            return cmd_estimate(cfg)
        if args.command == "check-ps":
            return cmd_check_ps(cfg, args.oracle)
        return cmd_study(cfg)
    except (UsageError, wb.WorkbenchError, MeshError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantFailure, SolverError) as exc:
        print(f"invariant check failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
