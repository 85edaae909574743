"""
Three discretisations of one manufactured problem
=================================================

The workbench case ``sine3`` has a smooth exact solution with homogeneous
Dirichlet data.  We solve it with conforming Lagrange elements, symmetric
interior penalty DG and the Raviart-Thomas mixed method, and compare errors.
"""

from aposteriori3d import exact_error, manufactured_problem, solve
from aposteriori3d.workbench import rates

for scheme in ("conforming", "ipdg", "mixed"):
    errors = []
    for n in (2, 4):
        problem = manufactured_problem("sine3", n)
        out = solve(problem, scheme, p=1)
        err = exact_error(problem, out)
        errors.append(err.total)
    print(f"{scheme:>10}: {err.measure:<16} n=2 {errors[0]:.4f}  n=4 {errors[1]:.4f}  "
          f"reduction {rates(errors)[0]:.2f}")

# all schemes expose the same post-processed gradient: grad u_h, the lifted
# discrete gradient of the DG solution, or -A^-1 sigma_h for the mixed flux
problem = manufactured_problem("sine3", 2)
out = solve(problem, "ipdg", p=2)
print("IPDG p=2 discrete gradient lives in", out.gradient.space)
