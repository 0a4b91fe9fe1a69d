"""Small worked cases with known answers, one per documented behaviour."""
import numpy as np
import pytest

from slq import (Feedback, FeedbackPath, OpenLoop, certify, certify_via_riccati, check_as34,
                 check_classical, control_transform_conditioning, estimate_cost,
                 exact_cost_deterministic, feedback_from, hessian_lambda_min, library,
                 lyapunov_psd_check, make_scenario, pseudo_inverse, riccati_direct,
                 riccati_iterate, simulate, solve_lyapunov, verify_value_function)
from slq.convexity import control_transform_matrix
from slq.lyapunov import MatrixPath
from slq.sde import predicted_excess


# --- Lyapunov -------------------------------------------------------------

def test_lyapunov_decoupled_exponentials():
    lam = np.array([-1.0, -2.5, 0.3])
    sc = make_scenario(lam, T=1.0, m=50, G=np.eye(3))
    P = solve_lyapunov(sc).values
    exact = np.exp(2 * lam[None] * (1.0 - sc.grid.nodes[:, None]))
    np.testing.assert_allclose(np.diagonal(P, axis1=1, axis2=2), exact, rtol=1e-14)


def test_lyapunov_constant_solution():
    G0 = np.array([[2.0, 0.5], [0.5, 1.0]])
    P = solve_lyapunov(make_scenario([0.0, 0.0], m=10, G=G0)).values
    assert np.all(P == G0)


def test_lyapunov_noise_driven_growth():
    # p' = -(p + 1), p(T) = 0: p(s) = e^{T-s} - 1
    sc = make_scenario([0.0], T=1.0, m=1000, C=1.0, Q=1.0)
    np.testing.assert_allclose(solve_lyapunov(sc).values[:, 0, 0],
                               np.expm1(1.0 - sc.grid.nodes), atol=1e-13)


def test_psd_check_cases():
    sc = make_scenario([-1.0, -2.0], m=20, k=2, Q=np.eye(2), R=np.eye(2), G=np.eye(2))
    assert lyapunov_psd_check(solve_lyapunov(sc))
    zero = make_scenario([-1.0, -2.0], m=20)
    assert lyapunov_psd_check(solve_lyapunov(zero))
    vals = np.repeat(np.eye(2)[None], 21, axis=0)
    vals[0] = np.diag([-1.0, 1.0])
    assert not lyapunov_psd_check(MatrixPath(zero.grid, vals, symmetric=True))


# --- Riccati --------------------------------------------------------------

@pytest.mark.parametrize("F, expect, rank", [
    (np.zeros((2, 2)), np.zeros((2, 2)), 0),
    (np.diag([2.0, 0.0]), np.diag([0.5, 0.0]), 1),
    (np.eye(3), np.eye(3), 3),
])
def test_pseudo_inverse_cases(F, expect, rank):
    pi = pseudo_inverse(F)
    np.testing.assert_allclose(pi.matrix, expect, atol=1e-15)
    assert pi.rank == rank


def test_no_control_authority_converges_at_once():
    sc = make_scenario([-1.0], T=1.0, m=50, k=1, C=0.3, Q=1.0, R=1.0, G=1.0)
    sol = riccati_iterate(sc)
    assert sol.iterations == 1
    np.testing.assert_array_equal(sol.P.values, solve_lyapunov(sc).values)
    assert np.all(feedback_from(sol).values == 0)


def test_direct_zero_solution():
    sc = make_scenario([-1.0], T=1.0, m=20, B=1.0, R=1.0)
    assert np.all(riccati_direct(sc).P.values == 0)


def test_certificate_examples():
    sol = riccati_iterate(library.scalar_riccati(m=200))
    assert sol.certificate.kind == "StronglyRegular" and sol.certificate.lam == pytest.approx(1.0)
    zero = make_scenario([0.0], m=10, B=1.0)
    Pz = MatrixPath(zero.grid, np.zeros((11, 1, 1)), symmetric=True)
    cert = certify(Pz, zero)
    assert cert.kind == "Regular" and cert.range_defect == 0 and cert.kmin == 0
    Pi = MatrixPath(zero.grid, np.ones((11, 1, 1)), symmetric=True)
    cert = certify(Pi, zero)
    assert cert.kind == "NotCertified" and cert.reason == "range condition violated"


def test_strongly_regular_gain_is_inverse():
    sol = riccati_iterate(library.scalar_riccati(m=200))
    p = library.scalar_riccati_closed_form(sol.scenario.grid.nodes)
    np.testing.assert_allclose(feedback_from(sol).values[:, 0, 0], -p, atol=1e-12)


# --- simulation -----------------------------------------------------------

def test_deterministic_decay_paths():
    sc = make_scenario([-1.0], T=1.0, m=100, eta=[1.0])
    ens = simulate(sc, OpenLoop(np.zeros((101, 1))), 5, keep_paths=True)
    np.testing.assert_allclose(ens.states[:, :, 0], np.exp(-sc.grid.nodes)[None].repeat(5, 0),
                               rtol=1e-13)


def test_null_dynamics_stay_zero():
    sc = make_scenario([0.3], T=1.0, m=50, C=1.0, Q=1.0, G=1.0)
    pol = OpenLoop(np.zeros((51, 1)))
    ens = simulate(sc, pol, 100, keep_paths=True)
    assert not ens.states.any()
    assert estimate_cost(sc, pol, ens).mean == 0.0


def test_geometric_brownian_second_moment():
    sc = make_scenario([0.0], T=1.0, m=100, C=1.0, G=1.0, eta=[1.0], seed=3)
    pol = OpenLoop(np.zeros((101, 1)))
    est = estimate_cost(sc, pol, simulate(sc, pol, 100_000))
    assert abs(est.z(np.e)) <= 4
    assert est.exact == pytest.approx(np.e, rel=1e-10)


def test_control_only_cost():
    sc = make_scenario([0.0], T=1.0, m=50, R=1.0)
    pol = OpenLoop(np.ones((51, 1)))
    est = estimate_cost(sc, pol, simulate(sc, pol, 10))
    assert est.mean == pytest.approx(1.0, abs=1e-14) and est.stderr == 0
    assert exact_cost_deterministic(sc, np.ones((50, 1))) == pytest.approx(1.0, abs=1e-14)


def test_value_check_with_zero_initial_state():
    sc = library.noisy_scalar(eta=[0.0])
    rep = verify_value_function(sc, riccati_iterate(sc), 500, n_perturb=1, n_margin=0)
    assert rep.value == 0 and rep.closed_loop.mean == 0 and rep.z_value == 0


def test_unit_deviation_excess_equals_horizon():
    sol = riccati_iterate(library.scalar_riccati(m=200))
    assert predicted_excess(sol, np.ones((201, 1))) == pytest.approx(1.0, abs=1e-12)
    assert predicted_excess(sol, np.zeros((201, 1))) == 0


# --- convexity ------------------------------------------------------------

def test_classical_scalar_certificate():
    sc = make_scenario([0.0], T=1.0, m=40, B=1.0, Q=1.0, R=1.0, G=1.0)
    rep = certify_via_riccati(sc)
    assert rep.verdict == "CertifiedConvex" and rep.lam >= 1 - 1e-8
    assert rep.hessian_lambda_min >= rep.lam - 1e-6


def test_state_cost_gives_positive_curvature():
    assert hessian_lambda_min(make_scenario([0.0], T=1.0, m=40, B=1.0, Q=1.0)) > 0


def test_classical_tolerance_edge():
    sc = make_scenario([0.0, 0.0], m=4, Q=np.eye(2), R=2 * np.eye(2),
                       G=np.diag([1.0, -1e-15]))
    assert check_classical(sc.coeffs) == pytest.approx(2.0)


def test_as34_absent_without_terminal_weight():
    sc = make_scenario([0.0], T=1.0, m=40, D=1.0, R=-0.5, G=0.0)
    assert check_as34(sc, eps0=0.4) is None


def test_control_transform_identity_cases():
    sc = make_scenario([0.0], T=1.0, m=30, B=1.0)
    zero = FeedbackPath.zeros(sc.grid, 1, 1)
    assert np.array_equal(control_transform_matrix(sc, zero), np.eye(30))
    assert control_transform_conditioning(sc, zero) == 1.0
    no_drive = make_scenario([0.0], T=1.0, m=30, D=1.0)
    theta = FeedbackPath.constant(no_drive.grid, [[-2.0]])
    assert control_transform_conditioning(no_drive, theta) == pytest.approx(1.0, abs=1e-14)
