import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aposteriori3d.est_residual import (comparison_ratios, estimate_residual_ipdg, estimate_residual_mixed,
                                        estimate_standard_ipdg)
from aposteriori3d.fem import BROKEN_VECTOR, build_space, interpolate
from aposteriori3d.report import EstimatorReport
from aposteriori3d.schemes import SchemeOutput, solve

from helpers import level, problem, solution


@pytest.mark.parametrize("scheme,fn", [("ipdg", estimate_residual_ipdg), ("mixed", estimate_residual_mixed),
                                       ("ipdg", estimate_standard_ipdg)])
def test_zero_load_gives_zero(scheme, fn):
    rep = fn(problem("zero", 2), solution("zero", scheme, 1, 2))
    assert rep.total == 0.0 and rep.total_with_oscillation == 0.0


def test_quadratic_exactness():
    pr = problem("quadratic_x", 2)
    for fn, scheme in ((estimate_residual_ipdg, "ipdg"), (estimate_residual_mixed, "mixed"),
                       (estimate_standard_ipdg, "ipdg")):
        rep = fn(pr, solution("quadratic_x", scheme, 2, 2))
        assert rep.total_with_oscillation <= 1e-18  # eta <= 1e-9


def test_boundary_parts_are_excluded():
    """The exact gradient of the quadratic case has nonzero normal trace on the
    Dirichlet faces and nonzero tangential trace nowhere; neither boundary part may enter."""
    pr = problem("quadratic_x", 2)
    G = interpolate(build_space(pr.mesh, BROKEN_VECTOR, 1), pr.grad_u)
    rep = estimate_residual_ipdg(pr, SchemeOutput("ipdg", 2, None, {"discrete_gradient": G}))
    assert rep.total <= 1e-18
    # the same field rotated into the y-direction violates the Dirichlet tangential condition
    G2 = interpolate(G.space, lambda x: np.stack([0 * x[..., 0], 1 - 2 * x[..., 0], 0 * x[..., 0]], -1))
    rep2 = estimate_residual_ipdg(pr, SchemeOutput("ipdg", 2, None, {"discrete_gradient": G2}))
    assert rep2.term_total("tangential_jump") > 1e-3


@settings(max_examples=8)
@given(st.floats(0.1, 10.0))
def test_homogeneity(c):
    """Scaling the load by c scales every squared term by c^2."""
    base = problem("sine3", 2)
    ref = level("sine3", "ipdg", 1, 2, ("residual",)).reports["residual"]
    rep = estimate_residual_ipdg(base.scaled(c), solve(base.scaled(c), "ipdg", 1))
    for t in ref.terms:
        assert np.allclose(rep.terms[t], c ** 2 * ref.terms[t], rtol=1e-9, atol=1e-14)


def test_wrong_scheme_rejected():
    pr = problem("sine3", 2)
    with pytest.raises(ValueError):
        estimate_residual_ipdg(pr, solution("sine3", "mixed", 1, 2))
    with pytest.raises(ValueError):
        estimate_residual_mixed(pr, solution("sine3", "ipdg", 1, 2))


@pytest.mark.parametrize("scheme", ["ipdg", "mixed"])
def test_effectivity_stable_under_refinement(scheme):
    eff = [level("sine3", scheme, 1, n, ("residual",)).reports["residual"].effectivity for n in (2, 4)]
    assert min(eff) >= 1.0 and max(eff) / min(eff) <= 2.0


def test_comparison_with_standard_estimator():
    worst = []
    for n in (2, 4):
        lv = level("sine3", "ipdg", 1, n, ("residual", "standard"))
        r = comparison_ratios(lv.reports["residual"], lv.reports["standard"], problem("sine3", n).mesh)
        assert np.all(np.isfinite(r))
        worst.append(r.max())
    assert max(worst) / min(worst) <= 2.0


def test_report_invariants():
    rep = level("sine3", "mixed", 1, 2, ("residual",)).reports["residual"]
    assert rep.oscillation == ("oscillation",)
    assert np.allclose(rep.eta2, rep.terms["curl"] + rep.terms["tangential_jump"])
    assert rep.total_with_oscillation == pytest.approx(rep.total + rep.terms["oscillation"].sum())
    assert all(np.all(v >= 0) for v in rep.terms.values())
    assert len(list(rep.rows())) == len(rep.eta2) * len(rep.terms)
    with pytest.raises(ValueError):
        EstimatorReport("residual", "ipdg", 1, {"a": np.array([1.0, -1.0])})
