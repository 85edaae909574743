"""
Checking the Prager-Synge split numerically
===========================================

The energy error of the discrete gradient splits into a flux part and a
distance-to-gradients part.  Both minima are approximated from above by
discrete solves of an oracle degree, so error^2 <= term1 + term2 must hold.
"""

from aposteriori3d import curl_free_potential, manufactured_problem, prager_synge_check, solve

problem = manufactured_problem("sine3", 2)
out = solve(problem, "ipdg", p=1)
phi = curl_free_potential(problem, out.gradient).phi
for degree in (2, 3):
    rep = prager_synge_check(problem, out.gradient, degree, phi=phi, p=1)
    print(f"oracle degree {degree}: error^2 {rep.error2:.5f}  term1 {rep.term1:.5f}  term2 {rep.term2:.5f}  "
          f"defect {rep.defect:+.5f}  one-sided={rep.one_sided()}")
    print(f"    sigma* norm identity residual {rep.identity_residual:.1e}")

# phi_h is another curl-free candidate, so ||G - phi_h||^2 also bounds the
# distance-to-gradients minimum from above
print(f"||G - phi_h||^2 = {rep.curl_bound:.5f}")
