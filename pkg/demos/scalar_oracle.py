"""The scalar problem dx = u ds, cost x(T)^2 + int u^2.

Its Riccati equation P' = P^2, P(T) = 1 has the solution P(s) = 1/(1 + T - s),
so the optimal cost from x(0) = 1 is 1/2 and the optimal feedback is
u = -P(s) x.  This script solves it both ways, compares with the closed form
and confirms the value with a Monte Carlo run.
"""
import numpy as np

from slq import Feedback, estimate_cost, library, riccati_direct, riccati_iterate, simulate

sc = library.scalar_riccati(m=10_000)
exact = library.scalar_riccati_closed_form(sc.grid.nodes)

for solver in (riccati_iterate, riccati_direct):
    sol = solver(sc)
    err = np.abs(sol.P.values[:, 0, 0] - exact).max()
    print(f"{sol.method:8s} P(0) = {sol.P.start[0, 0]:.15f}  sup error {err:.1e}  "
          f"{sol.certificate.kind} (lambda = {sol.certificate.lam:.3f})")

sol = riccati_iterate(sc)
print("successive approximation updates:", ", ".join(f"{d:.1e}" for d in sol.deltas))

# the Euler scheme happens to reproduce 1/2 exactly for this feedback, so a
# coarse grid is enough for the Monte Carlo check
coarse = library.scalar_riccati(m=200)
pol = Feedback(riccati_iterate(coarse).theta)
est = estimate_cost(coarse, pol, simulate(coarse, pol, 1000))
print(f"closed-loop Monte Carlo cost {est.estimate:.12f} (value 0.5)")
