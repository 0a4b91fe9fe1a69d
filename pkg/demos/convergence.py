"""Observed orders of the two discretizations.

The Lyapunov/Riccati integrator is fourth order (Runge-Kutta in Lawson form)
and the path simulation has weak order one (exponential Euler-Maruyama).
Weak errors are estimated from coupled runs that share Brownian paths on
nested grids, which makes the differences nearly noise free.
"""
import numpy as np

from slq import (Feedback, FeedbackPath, coupled_costs, library, make_scenario,
                 observed_weak_order, solve_lyapunov)

exact = 2 * np.exp(1.7) - 1 / 1.7 * (1 - np.exp(1.7))  # p' + 1.7 p + 1 = 0, p(1) = 2
print("Lyapunov solver, scalar with closed form")
prev = None
for m in (5, 10, 20, 40, 80):
    sc = make_scenario([0.0], T=1.0, m=m, A1=0.7, C=np.sqrt(0.3), Q=1.0, G=2.0)
    err = abs(solve_lyapunov(sc).start[0, 0] - exact)
    print(f"  m = {m:3d}  error {err:.2e}" + (f"  order {np.log2(prev / err):.2f}" if prev else ""))
    prev = err

print("Monte Carlo weak error, noisy scalar under the feedback u = -x")
sc = library.noisy_scalar(m=400)
strides = (1, 2, 4, 8, 16)
costs = coupled_costs(sc, Feedback(FeedbackPath.constant(sc.grid, [[-1.0]])), strides, 10_000)
means = costs.mean(axis=1)
for s, (a, b) in zip(strides[1:], zip(means[1:], means[:-1])):
    print(f"  m = {400 // s:3d}  J(m) - J(2m) = {a - b:.3e}")
print(f"  observed weak order {observed_weak_order(costs):.2f}")
