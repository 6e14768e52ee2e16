"""Tour of the constitutive laws and the admissibility check.

Evaluates the degenerate mobility a(S), the capillary-pressure derivative
p_c'(S), the relaxation coefficient tau(S) and the quotient tau/a across the
saturation interval, verifies the pointwise bound p_c' <= tau/a that the
entropy estimates rest on, and prints the derived integrability exponents.

Run:  python3 demos/01_coefficient_laws.py
"""

import numpy as np

from capmix import constitutive as cst


def main():
    params = cst.default_params()
    print("reference exponents:")
    print(f"  lam={params.lam}  gamma={params.gamma}  gamma1={params.gamma1}"
          f"  beta1={params.beta1}  beta2={params.beta2}")

    report = cst.validate_assumptions(params)
    print(f"\nadmissibility: {'accepted' if report.accepted else 'REJECTED'}")
    print(f"  alpha1 = {report.alpha1:.12g}   (boundary-layer exponent at S -> 0)")
    print(f"  alpha2 = {report.alpha2:.12g}   (boundary-layer exponent at S -> 1)")
    print(f"  p_gamma = {report.p_gamma:.12g}  p_lambda = {report.p_lambda:.12g}")
    print(f"  p = {report.p:.12g}  q = {report.q:.12g}   (gradient integrability)")

    print("\ncoefficients across the saturation interval:")
    print(f"  {'S':>6} {'a(S)':>12} {'pc_prime':>12} {'tau':>12} "
          f"{'tau/a':>12} {'margin':>10}")
    for s in (0.05, 0.25, 0.5, 0.75, 0.95):
        c = cst.eval_coeffs(s, params)
        margin = c.tau_over_a - c.pc_prime
        print(f"  {s:>6.2f} {c.a:>12.4e} {c.pc_prime:>12.4e} "
              f"{c.tau:>12.4e} {c.tau_over_a:>12.4e} {margin:>10.3e}")

    grid = np.linspace(0.0, 1.0, 100002)[1:-1]
    c = cst.eval_coeffs(grid, params)
    violations = int(np.count_nonzero(c.pc_prime > c.tau_over_a))
    print(f"\npc' <= tau/a on a {grid.size}-point grid: "
          f"{violations} violations")
    print(f"exact midpoint values: pc'(1/2) = {cst.eval_coeffs(0.5, params).pc_prime}"
          f"  (tau/a)(1/2) = {cst.eval_coeffs(0.5, params).tau_over_a}")

    print("\nwhat an inadmissible tuple looks like:")
    bad = cst.ModelParams(lam=7.0, gamma=6.2, gamma1=6.0, beta1=4.5, beta2=6.0)
    bad_report = cst.validate_assumptions(bad)
    print(f"  beta1 = 4.5 -> accepted={bad_report.accepted}, "
          f"violated: {bad_report.violated_clauses}")


if __name__ == "__main__":
    main()
