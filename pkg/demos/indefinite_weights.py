"""Convexity with an indefinite control weight.

When the control enters the noise (D != 0), a negative R can still give a
uniformly convex cost: with dx = u dW and G = 1, E x(T)^2 = int |u|^2, so the
cost with R = -1/2 is int |u|^2 / 2.  With G = 1/2 and R = -1 the same
mechanism is too weak and the cost is unbounded below.  The detectors agree.
"""
from slq import KNotInvertible, check_as34, hessian_lambda_min, library, riccati_iterate
from slq.convexity import assess

good = library.indefinite_convex()
sol = riccati_iterate(good)
print(f"R = -1/2, G = 1: K = R + D'PD has min eigenvalue {sol.certificate.lam:.6f}")
print(f"  curvature over piecewise-constant controls: {hessian_lambda_min(good):.6f}")
as34 = check_as34(good, eps0=0.4)
print(f"  terminal-state bound: C0 = {as34.c0_estimate:.6f}, certified with margin {as34.lam}")

bad = library.indefinite_failure()
try:
    riccati_iterate(bad)
except KNotInvertible as exc:
    print(f"R = -1, G = 1/2: {exc}")
print(f"  curvature over piecewise-constant controls: {hessian_lambda_min(bad):.6f}")
print(f"  verdict: {assess(bad).verdict}")

rep = assess(library.classical())
print(f"classical weights (R >= 2I): {rep.verdict}, lambda = {rep.lam:.4f}, "
      f"delta = {rep.details['classical_delta']}")
