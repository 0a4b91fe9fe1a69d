import io

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from slq import (DimensionMismatch, FeedbackPath, library, lyapunov_psd_check,
                 make_scenario, solve_lyapunov)


def scalar_closed_form(a, c2, q, g, T, s):
    """Solution of p' + (2a + c^2) p + q = 0, p(T) = g."""
    k = 2 * a + c2
    e = np.exp(k * (T - s))
    return g * e + q * (e - 1) / k if k != 0 else g + q * (T - s)


@pytest.mark.parametrize("lam, a1, c, q, g", [(0.0, 0.3, 0.5, 1.0, 2.0),
                                             (-2.0, 0.1, 0.0, 0.5, 1.0),
                                             (1.0, -0.4, 1.2, 0.0, 0.7)])
def test_scalar_zero_feedback_closed_form(lam, a1, c, q, g):
    sc = make_scenario([lam], T=1.0, m=400, A1=a1, C=c, Q=q, G=g, B=1.0, R=1.0)
    P = solve_lyapunov(sc)
    exact = scalar_closed_form(lam + a1, c * c, q, g, 1.0, sc.grid.nodes)
    np.testing.assert_allclose(P.values[:, 0, 0], exact, rtol=1e-11)


def test_optimal_feedback_reproduces_riccati_closed_form():
    # closed loop with Theta = -P has cost-to-go P itself
    sc = library.scalar_riccati(m=200)
    grid = sc.grid
    P = library.scalar_riccati_closed_form(grid.nodes)
    mid = library.scalar_riccati_closed_form(grid.nodes[:-1] + grid.dt / 2)
    stages = -np.stack([P[:-1], mid, P[1:]], axis=1)[:, :, None, None]
    theta = FeedbackPath(grid, -P[:, None, None], stages=stages)
    got = solve_lyapunov(sc, theta).values[:, 0, 0]
    np.testing.assert_allclose(got, P, atol=1e-10)


def test_rk4_order():
    errs = []
    for m in (8, 16, 32, 64):
        sc = make_scenario([0.0], T=1.0, m=m, A1=0.7, C=0.4, Q=1.0, G=1.0)
        P = solve_lyapunov(sc).values[0, 0, 0]
        errs.append(abs(P - scalar_closed_form(0.7, 0.16, 1.0, 1.0, 1.0, 0.0)))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert orders.min() > 3.7


@given(st.integers(1, 4), st.integers(0, 10_000))
def test_duhamel_formula_without_coupling(n, seed):
    # with A1 = C = 0 the solution is exp(A(T-s)) G exp(A(T-s)) + int exp(A r) Q exp(A r)
    r = np.random.default_rng(seed)
    lam = -r.uniform(0, 5, n)
    X = r.standard_normal((n, n))
    Y = r.standard_normal((n, n))
    G, Q = X @ X.T, Y @ Y.T
    sc = make_scenario(lam, T=1.0, m=200, G=G, Q=Q)
    P = solve_lyapunov(sc).values
    tau = 1.0 - sc.grid.nodes
    ls = lam[:, None] + lam[None, :]
    e = np.exp(ls[None] * tau[:, None, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        integ = np.where(ls == 0, tau[:, None, None], (e - 1) / ls)
    exact = G * e + Q * integ
    np.testing.assert_allclose(P, exact, atol=1e-9 * max(1, np.abs(exact).max()))


@given(st.integers(1, 3), st.integers(0, 10_000))
def test_positive_data_gives_psd_solution_and_norm_bound(n, seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, n))
    Y = r.standard_normal((n, n))
    sc = make_scenario(-r.uniform(0, 3, n), T=1.0, m=50, k=1,
                       A1=0.3 * r.standard_normal((n, n)), C=0.3 * r.standard_normal((n, n)),
                       B=r.standard_normal((n, 1)), R=1.0, G=X @ X.T, Q=Y @ Y.T)
    theta = FeedbackPath.constant(sc.grid, 0.5 * r.standard_normal((1, n)))
    P = solve_lyapunov(sc, theta)
    assert lyapunov_psd_check(P)
    # Gronwall: |P(s)| <= (|G| + (T - s)|W|) exp((2|M| + |Cc|^2)(T - s))
    c = sc.coeffs
    th = theta.values[0]
    M = np.linalg.norm(c.A1[0] + c.B[0] @ th, 2)
    Cc = np.linalg.norm(c.C[0] + c.D[0] @ th, 2)
    W = np.linalg.norm(c.Q[0] + th.T @ c.R[0] @ th, 2)
    tau = 1.0 - sc.grid.nodes
    bound = (np.linalg.norm(c.G, 2) + tau * W) * np.exp((2 * M + Cc**2) * tau)
    assert np.all(np.linalg.norm(P.values, 2, axis=(1, 2)) <= bound * (1 + 1e-9))


def test_decoupled_modes_solve_independently():
    lam = np.array([-1.0, -4.0, -9.0])
    sc = make_scenario(lam, T=1.0, m=640, A1=np.diag([0.2, 0.1, 0.0]),
                       C=np.diag([0.3, 0.2, 0.1]), Q=np.eye(3), G=np.diag([1.0, 2.0, 3.0]))
    P = solve_lyapunov(sc).values
    assert np.count_nonzero(P - np.diagonal(P, axis1=1, axis2=2)[:, :, None] * np.eye(3)) == 0
    for j in range(3):
        exact = scalar_closed_form(lam[j] + [0.2, 0.1, 0.0][j], [0.09, 0.04, 0.01][j],
                                   1.0, [1.0, 2.0, 3.0][j], 1.0, sc.grid.nodes)
        np.testing.assert_allclose(P[:, j, j], exact, rtol=1e-8)


def test_stiff_modes_are_stable_on_coarse_grid():
    # the exponential part keeps lambda = -1e4 bounded at dt = 0.1 (not accurate:
    # the local source weight h/6 survives, so the bound is dt)
    sc = make_scenario([-1e4, -1.0], T=1.0, m=10, Q=np.eye(2), G=np.eye(2))
    P = solve_lyapunov(sc).values
    assert np.all(np.isfinite(P))
    assert 0 < P[0, 0, 0] < sc.grid.dt
    fine = solve_lyapunov(sc.regrid(100_000)).values
    assert fine[0, 0, 0] == pytest.approx(0.5e-4, rel=1e-6)


def test_feedback_shape_checked(heat):
    with pytest.raises(DimensionMismatch):
        solve_lyapunov(heat, FeedbackPath.zeros(heat.grid, heat.k + 1, heat.n))
    other = heat.regrid(10)
    with pytest.raises(DimensionMismatch):
        solve_lyapunov(heat, FeedbackPath.zeros(other.grid, heat.k, heat.n))


def test_psd_check_flags_indefinite(caplog):
    sc = make_scenario([0.0], T=1.0, m=10, Q=-1.0, G=0.0)
    assert not lyapunov_psd_check(solve_lyapunov(sc))
    assert "node 0" in caplog.text


def test_path_csv_is_row_per_node():
    sc = make_scenario([0.0, -1.0], T=1.0, m=4, Q=np.eye(2), G=np.eye(2))
    P = solve_lyapunov(sc)
    buf = io.StringIO()
    P.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 6
    assert lines[0].split(",")[0] == "time"
    row = lines[1].split(",")
    assert float(row[1]) == P.values[0, 0, 0]
