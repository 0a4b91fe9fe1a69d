import json

import numpy as np
import pytest

from slq import (DimensionError, DNotSquare, DSingular, FeedbackPath, check_as34,
                 check_classical, certify_via_riccati, control_transform_conditioning,
                 hessian_lambda_min, library, make_scenario)
from slq.convexity import (AGAINST, CERTIFIED, INCONCLUSIVE, assess, control_basis,
                           control_transform_matrix, default_basis_size, estimate_c0,
                           quadratic_gram)
from slq.sde import exact_cost_deterministic


@pytest.mark.parametrize("R, expect", [(1.0, 1.0), (-1.0, -1.0), (2.5, 2.5)])
def test_hessian_of_pure_control_cost(R, expect):
    sc = make_scenario([0.0], T=1.0, m=40, R=R)
    assert hessian_lambda_min(sc) == pytest.approx(expect, abs=1e-12)


def test_gram_reproduces_cost(noisy, rng):
    # J(t0, 0; u) = c' H c for u = sum c_a e_a
    sc = noisy.regrid(40)
    basis, widths = control_basis(sc, 8)
    H = quadratic_gram(sc, basis)
    coef = rng.standard_normal(len(basis))
    u = np.tensordot(coef, basis, axes=1)
    J = exact_cost_deterministic(sc, u, eta=np.zeros(1))
    assert coef @ H @ coef == pytest.approx(J, rel=1e-10)
    np.testing.assert_allclose(H, H.T)


def test_basis_size_rules(heat):
    assert default_basis_size(heat) % heat.k == 0
    with pytest.raises(DimensionError):
        control_basis(library.noisy_scalar(m=40), 7)


def test_classical_condition():
    assert check_classical(library.classical().coeffs) == pytest.approx(2.0)
    assert check_classical(library.indefinite_convex().coeffs) is None
    assert check_classical(make_scenario([0.0], m=10, Q=-1.0, R=1.0).coeffs) is None


def test_c0_estimate_for_unit_control_noise():
    # x(T) = int u dW so E|x(T)|^2 = |u|^2 exactly
    assert estimate_c0(library.indefinite_convex()) == pytest.approx(1.0, rel=1e-9)


def test_as34_routes():
    sc = library.indefinite_convex()
    rep = check_as34(sc, eps0=0.4)
    assert rep.verdict == CERTIFIED and rep.lam == 0.4 and rep.witness == "AS34"
    assert rep.c0_estimate == pytest.approx(1.0, rel=0.02)
    assert check_as34(sc, eps0=0.6) is None
    with pytest.raises(DNotSquare):
        check_as34(library.heat_modes(n=3, k=2, m=60))
    with pytest.raises(DSingular):
        check_as34(library.scalar_riccati(m=20))


def test_riccati_route_verdicts(heat):
    rep = certify_via_riccati(library.indefinite_convex())
    assert rep.verdict == CERTIFIED and rep.lam == pytest.approx(0.5, abs=1e-9)
    bad = certify_via_riccati(library.indefinite_failure())
    assert bad.verdict == AGAINST and bad.hessian_lambda_min < 0
    assert bad.details["riccati"]["j"] == 0
    stuck = certify_via_riccati(heat, max_iter=1, with_hessian=False)
    assert stuck.verdict == INCONCLUSIVE


def test_hessian_bounds_riccati_margin(heat):
    # the true curvature is >= min K, and the Gram estimate over a subspace
    # can only overestimate the true infimum
    rep = certify_via_riccati(heat)
    assert rep.verdict == CERTIFIED
    assert rep.hessian_lambda_min >= rep.lam - 1e-9


def test_classical_scenario_margin():
    rep = assess(library.classical())
    assert rep.verdict == CERTIFIED and rep.witness == "Riccati"
    assert rep.lam >= 2.0 - 1e-6
    assert rep.details["classical_delta"] == pytest.approx(2.0)


def test_assess_prefers_as34_when_classical_fails():
    rep = assess(library.indefinite_convex(), eps0=0.3)
    assert rep.witness == "AS34" and rep.lam == 0.3
    assert rep.details["riccati_lambda"] == pytest.approx(0.5, abs=1e-9)
    doc = json.loads(rep.to_json())
    assert doc["schema"] == 1 and doc["verdict"] == CERTIFIED


def test_control_transform_is_unit_lower_triangular(noisy_solution):
    sc = noisy_solution.scenario.regrid(40)
    theta = FeedbackPath.constant(sc.grid, [[-1.0]])
    L = control_transform_matrix(sc, theta)
    np.testing.assert_array_equal(np.diag(L), 1.0)
    assert np.all(np.triu(L, 1) == 0)


def test_control_transform_conditioning_converges():
    # u -> u + int_0^s u(r) dr: <u, Vu> = (int u)^2 / 2 >= 0, so the continuum
    # infimum of |Lu|/|u| is 1, approached by oscillating controls
    sc = make_scenario([0.0], T=1.0, m=100, B=1.0)
    c = [control_transform_conditioning(s, FeedbackPath.constant(s.grid, [[-1.0]]))
         for s in (sc, sc.regrid(200))]
    assert c[0] < c[1] < 1.0
    assert c[1] == pytest.approx(1.0, rel=0.01)
