"""
Residual estimators built on the discrete gradient
==================================================

For IPDG the estimator measures div(A G) + f, normal jumps of A G, curl G and
tangential jumps of G.  The classical estimator with penalised potential jumps
is computed alongside for comparison.
"""

import numpy as np

from aposteriori3d import exact_error, manufactured_problem, solve
from aposteriori3d.est_residual import comparison_ratios, estimate_residual_ipdg, estimate_standard_ipdg

for n in (2, 4):
    problem = manufactured_problem("sine3", n)
    out = solve(problem, "ipdg", p=1)
    err = exact_error(problem, out)
    new = estimate_residual_ipdg(problem, out).with_error(err.per_element)
    std = estimate_standard_ipdg(problem, out).with_error(err.per_element)
    print(f"n={n}: error {err.total:.4f}  residual eta {new.eta:.4f} (eff {new.effectivity:.2f})  "
          f"standard eta {std.eta:.4f} (eff {std.effectivity:.2f})")
    for term in new.terms:
        print(f"    {term:<16} {np.sqrt(new.term_total(term)):.4f}")
    r = comparison_ratios(new, std, problem.mesh)
    print(f"    largest local comparison ratio {r.max():.3f}")
