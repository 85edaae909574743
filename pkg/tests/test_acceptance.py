"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or directly with ``python3 tests/test_acceptance.py``.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_baselines as baselines  # noqa: E402
from acceptance_log import record  # noqa: E402
from helpers import curl_pairings, l2norm, level, problem, random_points_in_tets, solution  # noqa: E402

from aposteriori3d import cli, fem  # noqa: E402
from aposteriori3d.assembly import dg_faces, discrete_gradient, face_quadrature, lifting  # noqa: E402
from aposteriori3d.est_residual import comparison_ratios  # noqa: E402
from aposteriori3d.est_equilibrated import curl_free_potential  # noqa: E402
from aposteriori3d.fem import (BROKEN_SCALAR, BROKEN_VECTOR, NEDELEC, Field, build_space,  # noqa: E402
                               element_quadrature, face_trace, hat_function)
from aposteriori3d.mesh import DIRICHLET, edge_patch_union, face_patch_union, patch_of  # noqa: E402
from aposteriori3d.schemes import galerkin_residual  # noqa: E402
from aposteriori3d.workbench import ALLOWED, local_efficiency, prager_synge_check  # noqa: E402

pytestmark = pytest.mark.slow

SCHEME_ESTIMATORS = {s: tuple(ALLOWED[s]) for s in ALLOWED}
NEIGHBOURHOOD = {"residual": "face", "standard": "face", "equilibrated": "element", "alternative": "edge"}

# regression baselines frozen from the first verified run (criteria 5 and 7)
BASELINE_EFFECTIVITY = baselines.EFFECTIVITY
BASELINE_LOCAL = baselines.LOCAL
BASELINE_PS_RELATIVE_DEFECT = baselines.PS_SIGNED_RELATIVE_DEFECT
BASELINE_RTOL = 1e-6


def _lv(case, scheme, p, n):
    return level(case, scheme, p, n, SCHEME_ESTIMATORS[scheme])


def _rel(value, scale):
    return float(value) / scale if scale > 0 else float(value)


def _max(v):
    return float(np.abs(v).max(initial=0.0))


def _l2(mesh, values, w):
    v2 = values ** 2 if values.ndim == 2 else (values ** 2).sum(-1)
    return float(np.sqrt(np.einsum("eq,eq->", w, v2)))


# criterion 1 ---------------------------------------------------------------------------------

def _lifting_identity(mesh, p, rng):
    scalar = build_space(mesh, BROKEN_SCALAR, p)
    vec = build_space(mesh, BROKEN_VECTOR, p - 1)
    v = Field(scalar, rng.standard_normal(scalar.ndofs))
    L = lifting(v)
    elems = np.arange(mesh.n_tets)
    x, w = element_quadrature(mesh, elems, 2 * p)
    lhs = np.einsum("eq,eqc,eqbc->eb", w, L.eval(elems, x), vec.eval(elems, x))
    rhs = np.zeros_like(lhs)
    faces = dg_faces(mesh)
    xf, wf, _ = face_quadrature(mesh, faces, 2 * p + 2)
    n = mesh.face_normals[faces]
    jump = face_trace(v, faces).jump
    avg = np.where(mesh.face_tets[faces, 1] >= 0, 0.5, 1.0)
    for s in (0, 1):
        t = mesh.face_tets[faces, s]
        ok = t >= 0
        contrib = np.einsum("fq,fq,fqbc,fc->fb", wf, jump, vec.eval(np.where(ok, t, 0), xf), n)
        np.add.at(rhs, np.where(ok, t, 0), contrib * (avg * ok)[:, None])
    return _rel(_max(lhs - rhs), _max(rhs))


def criterion_1():
    rng = np.random.default_rng(11)
    mesh = problem("sine_mixed_bc", 2).mesh
    checks = []  # (name, value, tolerance)
    elems, x = random_points_in_tets(mesh, 50, rng)
    pu = sum(hat_function(mesh, a).eval(elems, x) for a in range(mesh.n_vertices))
    checks.append(("partition of unity", _max(pu - 1.0), 1e-12))
    c = np.array([0.3, -1.2, 2.0])
    ned = build_space(mesh, NEDELEC, 1)
    checks.append(("edge constant reproduction", _max(Field(ned, mesh.edge_tangents @ c).eval(elems, x) - c), 1e-11))
    for p in (1, 2):
        checks.append((f"lifting identity p={p}", _lifting_identity(mesh, p, rng), 1e-9))
        scalar = build_space(mesh, BROKEN_SCALAR, p)
        G = discrete_gradient(Field(scalar, rng.standard_normal(scalar.ndofs)))
        for k in range(1, p + 1):
            vals, scale = curl_pairings(G, k)
            checks.append((f"discrete gradient orthogonality p={p} k={k}", _rel(_max(vals), scale.max()), 1e-9))
    pr = problem("sine_mixed_bc", 2)
    elems_all = np.arange(mesh.n_tets)
    xq, wq = element_quadrature(mesh, elems_all, 10)
    fnorm = _l2(mesh, pr.f(xq), wq)
    for p in (1, 2):
        ip = solution("sine_mixed_bc", "ipdg", p, 2)
        for k in range(1, p + 1):
            checks.append((f"IPDG Galerkin orthogonality p={p} k={k}", galerkin_residual(pr, ip.gradient, k), 1e-9))
        mx = solution("sine_mixed_bc", "mixed", p, 2)
        proj = fem.project_broken(mesh, p, pr.f)
        d = mx.primary.eval(elems_all, xq, "div") - proj.eval(elems_all, xq)
        checks.append((f"mixed div sigma_h = Pi f p={p}", _rel(_l2(mesh, d, wq), fnorm), 1e-9))
        for k in range(1, p + 1):
            vals, scale = curl_pairings(mx.gradient, k)
            checks.append((f"mixed orthogonality p={p} k={k}", _rel(_max(vals), scale.max()), 1e-9))
        for scheme in ("ipdg", "mixed"):
            lv = _lv("sine_mixed_bc", scheme, p, 2)
            rec = lv.reports["equilibrated"].metadata["reconstruction"]
            phi, sigma = rec.phi, rec.sigma
            xs, ws = element_quadrature(mesh, elems_all, 2 * phi.space.degree + 2)
            pn = l2norm(phi)
            dfaces = np.flatnonzero(mesh.face_label == DIRICHLET)
            checks.append((f"curl phi_h = 0 ({scheme} p={p})", _rel(_l2(mesh, phi.eval(elems_all, xs, "curl"), ws), pn),
                           1e-9))
            checks.append((f"phi_h tangential jumps ({scheme} p={p})",
                           _rel(_max(face_trace(phi, mesh.interior_faces, "tangential").jump), pn), 1e-9))
            checks.append((f"phi_h Dirichlet tangential trace ({scheme} p={p})",
                           _rel(_max(face_trace(phi, dfaces, "tangential").minus), pn), 1e-9))
            d = sigma.eval(elems_all, xq, "div") - fem.project_broken(mesh, p, pr.f).eval(elems_all, xq)
            checks.append((f"equilibrated div sigma_h = Pi f ({scheme} p={p})", _rel(_l2(mesh, d, wq), fnorm), 1e-9))
            for j, sk in enumerate(lv.reports["alternative"].metadata["fluxes"].sigma):
                xs, ws = element_quadrature(mesh, elems_all, 2 * sk.space.degree)
                sn = l2norm(sk)
                checks.append((f"div sigma^{j + 1} = 0 ({scheme} p={p})",
                               _rel(_l2(mesh, sk.eval(elems_all, xs, "div"), ws), sn), 1e-9))
                checks.append((f"sigma^{j + 1} Dirichlet normal trace ({scheme} p={p})",
                               _rel(_max(face_trace(sk, dfaces, "normal").minus), sn), 1e-9))
        ps = prager_synge_check(pr, ip.gradient, p + 1, p=p)
        checks.append((f"sigma* norm identity p={p}", ps.identity_residual, 1e-11))
    failed = [c for c in checks if not c[1] <= c[2]]
    worst = max(checks, key=lambda c: c[1] / c[2])
    detail = (f"{len(checks)} invariants, worst {worst[0]} = {worst[1]:.2e} (tol {worst[2]:.0e})" if not failed
              else "; ".join(f"{n} = {v:.2e} > {t:.0e}" for n, v, t in failed))
    return record("C1 exact algebraic invariants", not failed, detail)


# criterion 2 ---------------------------------------------------------------------------------

def criterion_2():
    rows, ok = [], True
    for case in ("sine3", "sine_mixed_bc"):
        for scheme in ("ipdg", "mixed"):
            for p in (1, 2):
                for n in (2, 4):
                    lv = level(case, scheme, p, n, ("equilibrated",))
                    rep = lv.reports["equilibrated"]
                    bound, e2 = rep.total_with_oscillation, lv.error.total2
                    margin = (bound - e2) / e2
                    ok &= margin >= -1e-6
                    rows.append(margin)
    return record("C2 guaranteed reliability", bool(ok),
                  f"{len(rows)} configurations, min relative margin {min(rows):.3e} (need >= -1e-6)")


# criterion 3 ---------------------------------------------------------------------------------

def criterion_3():
    pr = problem("quadratic_x", 2)
    elems = np.arange(pr.mesh.n_tets)
    x, w = element_quadrature(pr.mesh, elems, 4)
    gnorm = _l2(pr.mesh, pr.grad_u(x), w)
    worst_err, worst_eta, ok = 0.0, 0.0, True
    for scheme in ("conforming", "ipdg", "mixed"):
        lv = _lv("quadratic_x", scheme, 2, 2)
        rel = lv.error.total / gnorm
        worst_err = max(worst_err, rel)
        ok &= rel <= 1e-9
        for rep in lv.reports.values():
            eta = np.sqrt(rep.total_with_oscillation)
            worst_eta = max(worst_eta, eta)
            ok &= eta <= 1e-8
    return record("C3 quadratic reproduction", bool(ok),
                  f"max relative error {worst_err:.2e} (tol 1e-9), max estimator {worst_eta:.2e} (tol 1e-8)")


# criterion 4 ---------------------------------------------------------------------------------

RATE_LEVELS = {1: (4, 8), 2: (2, 4)}
RATE_BANDS = {1: (1.5, 2.5), 2: (3.0, 5.3)}


# an estimator below this fraction of the error is roundoff (the alternative estimator
# of a conforming solution, whose gradient has no nonconformity to measure)
VANISHING = 1e-10


def _vanishes(rep, lv):
    return rep.eta <= VANISHING * lv.error.total


def rate_table(p, levels):
    """Reduction factors of the error and each estimator eta; roundoff-level
    estimators are listed separately as vanishing."""
    table, vanishing = {}, []
    for scheme in ("conforming", "ipdg", "mixed"):
        a, b = (_lv("sine3", scheme, p, n) for n in levels)
        table[f"{scheme}/error"] = a.error.total / b.error.total
        for name in a.reports:
            if _vanishes(a.reports[name], a) and _vanishes(b.reports[name], b):
                vanishing.append(f"{scheme}/{name}")
            else:
                table[f"{scheme}/{name}"] = a.reports[name].eta / b.reports[name].eta
    return table, vanishing


def criterion_4():
    lines, ok = [], True
    for p, lv in RATE_LEVELS.items():
        lo, hi = RATE_BANDS[p]
        table, vanishing = rate_table(p, lv)
        bad = {k: round(float(v), 4) for k, v in table.items() if not lo <= v <= hi}
        ok &= not bad
        lines.append(f"p={p} n={lv[0]}->{lv[1]} {len(table)} ratios in [{min(table.values()):.3f}, "
                     f"{max(table.values()):.3f}]" + (f" outside [{lo}, {hi}]: {bad}" if bad else "")
                     + (f", vanishing: {', '.join(vanishing)}" if vanishing else ""))
    coarse, _ = rate_table(1, (2, 4))
    lines.append("p=1 n=2->4 (pre-asymptotic, informative): "
                 + ", ".join(f"{k} {v:.3f}" for k, v in sorted(coarse.items())))
    return record("C4 convergence rates", bool(ok), "; ".join(lines))


# criterion 5 ---------------------------------------------------------------------------------

def _neighbourhood(mesh, kind):
    if kind == "face":
        return lambda k: face_patch_union(mesh, k)
    if kind == "edge":
        return lambda k: edge_patch_union(mesh, k)
    return lambda k: patch_of(mesh, "element", k, 1).tets


def effectivity_values():
    eff, local = {}, {}
    for scheme in ("conforming", "ipdg", "mixed"):
        for p in (1, 2):
            for n in (2, 4):
                lv = _lv("sine3", scheme, p, n)
                mesh = problem("sine3", n).mesh
                for name, rep in lv.reports.items():
                    if _vanishes(rep, lv):
                        continue
                    key = f"{scheme}/p{p}/{name}/n{n}"
                    eff[key] = rep.effectivity
                    nb = _neighbourhood(mesh, NEIGHBOURHOOD[name])
                    local[key] = float(local_efficiency(rep, lv.error.per_element, nb).max())
    return eff, local


def _stability(values):
    ratios = {}
    for key in values:
        if key.endswith("/n2"):
            a, b = values[key], values[key[:-1] + "4"]
            ratios[key[:-3]] = max(a, b) / min(a, b)
    return ratios


def _frozen(values, baseline):
    if baseline is None:
        return True, "no baseline"
    diff = max(abs(values[k] - baseline[k]) / abs(baseline[k]) for k in baseline)
    return diff <= BASELINE_RTOL, f"max deviation from baseline {diff:.1e}"


def criterion_5():
    eff, local = effectivity_values()
    g, l_ = _stability(eff), _stability(local)
    ok = max(g.values()) <= 2.0 and max(l_.values()) <= 2.0
    f1, d1 = _frozen(eff, BASELINE_EFFECTIVITY)
    f2, d2 = _frozen(local, BASELINE_LOCAL)
    worst_g = max(g, key=g.get)
    worst_l = max(l_, key=l_.get)
    return record("C5 effectivity stability", bool(ok and f1 and f2),
                  f"global n=2 vs 4 worst x{g[worst_g]:.3f} ({worst_g}), local worst x{l_[worst_l]:.3f} "
                  f"({worst_l}); {d1}; {d2}")


# criterion 6 ---------------------------------------------------------------------------------

def criterion_6():
    worst, ok, parts = {}, True, []
    for p in (1, 2):
        m = []
        for n in (2, 4):
            lv = level("sine3", "ipdg", p, n, ("residual", "standard"))
            r = comparison_ratios(lv.reports["residual"], lv.reports["standard"], problem("sine3", n).mesh)
            ok &= bool(np.all(np.isfinite(r)))
            m.append(float(r.max()))
        worst[p] = max(m) / min(m)
        ok &= worst[p] <= 2.0
        parts.append(f"p={p} max ratio {m[0]:.3f} -> {m[1]:.3f} (x{worst[p]:.3f})")
    return record("C6 comparison with standard estimator", bool(ok), "; ".join(parts))


# criterion 7 ---------------------------------------------------------------------------------

def prager_synge_values():
    pr = problem("sine3", 2)
    out = solution("sine3", "ipdg", 1, 2)
    phi = curl_free_potential(pr, out.gradient).phi
    return {d: prager_synge_check(pr, out.gradient, d, phi=phi, p=1) for d in (2, 3)}


def criterion_7():
    reps = prager_synge_values()
    r2, r3 = reps[2], reps[3]
    signed = r2.defect / r2.error2
    ok = r2.one_sided() and signed <= 0.1 and r3.one_sided() and r3.relative_defect <= 0.1
    frozen, note = True, "no baseline"
    if BASELINE_PS_RELATIVE_DEFECT is not None:
        frozen = abs(signed - BASELINE_PS_RELATIVE_DEFECT) <= BASELINE_RTOL * abs(BASELINE_PS_RELATIVE_DEFECT)
        note = f"baseline {BASELINE_PS_RELATIVE_DEFECT:.6g}"
    return record("C7 Prager-Synge check", bool(ok and frozen),
                  f"oracle 2: error2 {r2.error2:.5f} <= term1+term2 {r2.term1 + r2.term2:.5f}, "
                  f"defect/error2 {signed:.4f} (<= 0.1, {note}); oracle 3: |defect|/error2 {r3.relative_defect:.4f}")


# criterion 8 ---------------------------------------------------------------------------------

def criterion_8(tmp):
    tmp = Path(tmp)
    args = ["study", "--case", "sine_mixed_bc", "--scheme", "ipdg", "--p", "1", "--n", "1,2",
            "--estimators", "residual,standard,equilibrated,alternative"]
    codes = [cli.main(args + ["--out", str(tmp / d)]) for d in ("a", "b")]
    same = (tmp / "a" / "study.csv").read_bytes() == (tmp / "b" / "study.csv").read_bytes()
    size = len((tmp / "a" / "study.csv").read_bytes())
    return record("C8 determinism", codes == [0, 0] and same,
                  f"two study runs exit {codes}, study.csv ({size} bytes) byte-identical: {same}")


# pytest entry points -------------------------------------------------------------------------

def test_c1_algebraic_invariants():
    assert criterion_1()


def test_c2_guaranteed_reliability():
    assert criterion_2()


def test_c3_quadratic_reproduction():
    assert criterion_3()


def test_c4_convergence_rates():
    assert criterion_4()


def test_c5_effectivity_stability():
    assert criterion_5()


def test_c6_comparison_ratios():
    assert criterion_6()


def test_c7_prager_synge():
    assert criterion_7()


def test_c8_determinism(tmp_path):
    assert criterion_8(tmp_path)


if __name__ == "__main__":
    import tempfile

    results = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(), criterion_6(),
               criterion_7()]
    with tempfile.TemporaryDirectory() as d:
        results.append(criterion_8(d))
    sys.exit(0 if all(results) else 1)
