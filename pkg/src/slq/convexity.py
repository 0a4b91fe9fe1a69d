"""Uniform-convexity certificates for the cost ``u -> J(t0, 0; u)``.

Four detectors are available:

* the Riccati route (authoritative): the successive approximation succeeds
  with ``K >= lambda I`` exactly when the cost is uniformly convex;
* a Gram-matrix estimate of the smallest curvature over piecewise-constant
  deterministic controls, a necessary condition only;
* the classical sufficient condition ``G >= 0, Q >= 0, R >= delta I``;
* the invertible-``D`` condition: when ``D`` is invertible the terminal
  state controls the input, ``|u|^2 <= C0 E|x(T)|^2``, and a large enough
  ``G`` compensates an indefinite ``R``.  ``C0`` is estimated numerically.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from .errors import (DimensionError, DNotSquare, DSingular, KNotInvertible,
                     MaxIterExceeded, MonotonicityViolation, NonFinite,
                     SingularTransform)
from .lyapunov import FeedbackPath
from .riccati import STRONGLY_REGULAR, riccati_iterate
from .sde import exact_cost_deterministic
from .spectral import CoefficientSet, Scenario

CERTIFIED = "CertifiedConvex"
AGAINST = "EvidenceAgainst"
INCONCLUSIVE = "Inconclusive"

PSD_TOL = 1e-12
D_FLOOR = 1e-8
MAX_DEFAULT_BASIS = 32
BATCH = 2048


@dataclass
class ConvexityReport:
    verdict: str
    lam: float | None = None
    witness: str | None = None
    reason: str | None = None
    hessian_lambda_min: float | None = None
    c0_estimate: float | None = None
    details: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    def to_dict(self) -> dict:
        return {"schema": 1, "verdict": self.verdict, "lambda": self.lam,
                "witness": self.witness, "reason": self.reason,
                "hessian_lambda_min": self.hessian_lambda_min,
                "c0_estimate": self.c0_estimate, "details": self.details}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Gram matrices over piecewise-constant deterministic controls


def default_basis_size(sc: Scenario) -> int:
    """``k`` times the largest divisor of ``m`` keeping the basis <= 32."""
    cap = max(1, MAX_DEFAULT_BASIS // sc.k)
    nb = max(d for d in range(1, min(cap, sc.grid.m) + 1) if sc.grid.m % d == 0)
    return nb * sc.k


def control_basis(sc: Scenario, basis_size: int | None = None):
    """Unit controls on time blocks: returns (basis (N, m, k), block widths).

    ``basis_size = m k`` gives one element per grid cell and control
    component; smaller sizes merge cells into equal blocks.
    """
    m, k = sc.grid.m, sc.k
    if basis_size is None:
        basis_size = default_basis_size(sc)
    if basis_size < 1 or basis_size > m * k or basis_size % k:
        raise DimensionError(f"basis size {basis_size} must be a multiple of k={k} "
                             f"and at most m*k={m * k}")
    nb = basis_size // k
    if m % nb:
        raise DimensionError(f"{nb} blocks do not divide the grid of {m} cells")
    width = m // nb
    basis = np.zeros((basis_size, m, k))
    for b in range(nb):
        for c in range(k):
            basis[b * k + c, b * width:(b + 1) * width, c] = 1.0
    return basis, np.full(basis_size, width * sc.grid.dt)


def quadratic_gram(sc: Scenario, basis: np.ndarray) -> np.ndarray:
    """Bilinear form of ``u -> J(t0, 0; u)`` on ``basis`` by polarization.

    ``H[a, b] = (J(e_a + e_b) - J(e_a) - J(e_b)) / 2``, every ``J`` from the
    moment equations.
    """
    N = basis.shape[0]
    eta0 = np.zeros(sc.n)
    ia, ib = np.triu_indices(N, 1)
    controls = np.concatenate([basis, basis[ia] + basis[ib]])
    J = np.concatenate([exact_cost_deterministic(sc, controls[s:s + BATCH], eta=eta0)
                        for s in range(0, controls.shape[0], BATCH)])
    diag = J[:N]
    H = np.diag(diag)
    off = 0.5 * (J[N:] - diag[ia] - diag[ib])
    H[ia, ib] = off
    H[ib, ia] = off
    return H


def _normalized_min_eig(H, widths):
    w = 1.0 / np.sqrt(widths)
    return float(np.linalg.eigvalsh(w[:, None] * H * w[None, :])[0])


def hessian_lambda_min(sc: Scenario, basis_size: int | None = None) -> float:
    """Smallest curvature of the cost per unit ``L^2`` norm of the control.

    Restricted to piecewise-constant deterministic controls, so it can only
    overestimate the infimum over adapted controls.
    """
    basis, widths = control_basis(sc, basis_size)
    return _normalized_min_eig(quadratic_gram(sc, basis), widths)


# ---------------------------------------------------------------------------
# sufficient conditions


def _psd(M, tol=PSD_TOL):
    M = np.asarray(M)
    eig = np.linalg.eigvalsh(M)[..., 0]
    return bool(np.all(eig >= -tol * np.maximum(1.0, np.abs(M).max())))


def check_classical(coeffs: CoefficientSet) -> float | None:
    """``min_s lambda_min(R(s))`` when ``G >= 0``, ``Q >= 0`` and it is positive."""
    if not (_psd(coeffs.G) and _psd(coeffs.Q)):
        return None
    delta = float(np.linalg.eigvalsh(coeffs.R)[:, 0].min())
    return delta if delta > 0 else None


def terminal_gram(sc: Scenario, basis: np.ndarray) -> np.ndarray:
    """Gram matrix of ``u -> E|x(T)|^2`` from zero initial state."""
    k = sc.k
    zero = np.zeros((sc.grid.m + 1, sc.n, sc.n))
    probe = sc.with_(Q=zero, R=np.zeros((sc.grid.m + 1, k, k)), G=np.eye(sc.n))
    return quadratic_gram(probe, basis)


def estimate_c0(sc: Scenario, basis_size: int | None = None) -> float:
    """``sup |u|^2 / E|x(T)|^2`` over the control basis span."""
    basis, widths = control_basis(sc, basis_size)
    lo = _normalized_min_eig(terminal_gram(sc, basis), widths)
    return 1.0 / lo if lo > 0 else np.inf


def check_as34(sc: Scenario, eps0: float | None = None,
               basis_size: int | None = None, hessian: float | None = None):
    """Certificate from invertible ``D`` and ``G >= mu0 I`` with
    ``mu0 > C0 (sup|R| + eps0)``; ``None`` when the inequality fails.

    The ``C0`` estimate is numerical, not a rigorous bound.
    """
    if sc.k != sc.n:
        raise DNotSquare(f"D is {sc.n}x{sc.k}")
    smin = np.linalg.svd(sc.coeffs.D, compute_uv=False)[:, -1]
    node = int(np.argmin(smin))
    if smin[node] < D_FLOOR:
        raise DSingular(node, float(smin[node]))
    r_sup = float(np.linalg.norm(sc.coeffs.R, ord=2, axis=(1, 2)).max())
    if eps0 is None:
        eps0 = 0.1 * r_sup if r_sup > 0 else 0.1
    c0 = estimate_c0(sc, basis_size)
    mu0 = float(np.linalg.eigvalsh(sc.coeffs.G)[0])
    details = {"c0": c0, "mu0": mu0, "r_sup": r_sup, "eps0": eps0,
               "d_sigma_min": float(smin[node]), "numerical": True}
    if not (np.isfinite(c0) and mu0 > c0 * (r_sup + eps0)):
        return None
    if hessian is None:
        hessian = hessian_lambda_min(sc, basis_size)
    return ConvexityReport(CERTIFIED, lam=eps0, witness="AS34",
                           hessian_lambda_min=hessian, c0_estimate=c0,
                           details={"as34": details})


def certify_via_riccati(sc: Scenario, tol: float = 1e-9, max_iter: int = 50,
                        basis_size: int | None = None, with_hessian: bool = True,
                        rank_tol: float = 1e-10) -> ConvexityReport:
    """Map the outcome of the successive approximation to a verdict.

    Strongly regular limit: certified with ``lambda = min_s lambda_min(K)``.
    ``K_j`` losing positivity: evidence against, with the witness.
    Non-convergence: inconclusive.
    """
    hess = hessian_lambda_min(sc, basis_size) if with_hessian else None
    try:
        sol = riccati_iterate(sc, tol=tol, max_iter=max_iter, rank_tol=rank_tol)
    except KNotInvertible as exc:
        return ConvexityReport(
            AGAINST, witness=f"j={exc.j}, node={exc.node}, lambda_min(K)={exc.kmin:.6g}",
            reason=str(exc), hessian_lambda_min=hess,
            details={"riccati": {"j": exc.j, "node": exc.node, "kmin": exc.kmin}})
    except (MaxIterExceeded, MonotonicityViolation, NonFinite) as exc:
        return ConvexityReport(INCONCLUSIVE, reason=str(exc), hessian_lambda_min=hess)
    cert = sol.certificate
    details = {"riccati": {"kmin": cert.kmin, "pmin": cert.pmin,
                           "iterations": sol.iterations, "value": sol.value()}}
    if cert.kind != STRONGLY_REGULAR:
        return ConvexityReport(INCONCLUSIVE, reason=f"certificate {cert.kind}",
                               hessian_lambda_min=hess, details=details)
    return ConvexityReport(CERTIFIED, lam=cert.lam, witness="Riccati",
                           hessian_lambda_min=hess, details=details)


def assess(sc: Scenario, tol: float = 1e-9, max_iter: int = 50, eps0: float | None = None,
           basis_size: int | None = None) -> ConvexityReport:
    """Run every applicable detector and pick the reported verdict.

    The Riccati verdict is reported unless the classical condition fails
    and the invertible-``D`` test certifies, in which case that witness is
    reported.  All detector outputs go into ``details``.
    """
    delta = check_classical(sc.coeffs)
    rep = certify_via_riccati(sc, tol, max_iter, basis_size)
    as34, as34_note = None, None
    if sc.k == sc.n:
        try:
            as34 = check_as34(sc, eps0, basis_size, hessian=rep.hessian_lambda_min)
        except DSingular as exc:
            as34_note = str(exc)
    else:
        as34_note = "D not square"
    details = dict(rep.details)
    details["classical_delta"] = delta
    details["riccati_verdict"] = rep.verdict
    details["riccati_lambda"] = rep.lam
    if as34 is not None:
        details.update(as34.details)
    details["as34_certified"] = as34 is not None
    if as34_note:
        details["as34_note"] = as34_note
    chosen = as34 if (delta is None and as34 is not None) else rep
    return replace(chosen, details=details,
                   c0_estimate=as34.c0_estimate if as34 is not None else None)


# ---------------------------------------------------------------------------
# control transform u -> u - Theta x(u)


def _cell_propagators(sc: Scenario):
    """Exact mean-dynamics maps over each cell: ``mu' = (A + A1) mu + B u``."""
    n, k, h = sc.n, sc.k, sc.grid.dt
    c = sc.coeffs
    Phi = np.empty((sc.grid.m, n, n))
    Gam = np.empty((sc.grid.m, n, k))
    aug = np.zeros((n + k, n + k))
    cache = {}
    for i in range(sc.grid.m):
        key = (c.A1[i].tobytes(), c.B[i].tobytes())
        if key not in cache:
            aug[:n, :n] = np.diag(sc.lam) + c.A1[i]
            aug[:n, n:] = c.B[i]
            E = la.expm(aug * h)
            cache[key] = (E[:n, :n], E[:n, n:])
        Phi[i], Gam[i] = cache[key]
    return Phi, Gam


def control_transform_matrix(sc: Scenario, theta: FeedbackPath) -> np.ndarray:
    """Matrix of ``u -> u - Theta x(u)`` on cell-wise constant controls.

    ``x(u)`` is the noiseless mean from zero initial state, evaluated at the
    left node of each cell, so the matrix is block unit lower triangular.
    """
    m, n, k = sc.grid.m, sc.n, sc.k
    Phi, Gam = _cell_propagators(sc)
    Lmat = np.eye(m * k)
    T = np.zeros((n, m * k))
    for i in range(m):
        Lmat[i * k:(i + 1) * k] -= theta.values[i] @ T
        T = Phi[i] @ T
        T[:, i * k:(i + 1) * k] += Gam[i]
    return Lmat


def control_transform_conditioning(sc: Scenario, theta: FeedbackPath) -> float:
    """``c0 = |L^{-1}|^{-2}``, the squared smallest singular value of the
    control transform (the ``dt`` weights cancel)."""
    Lmat = control_transform_matrix(sc, theta)
    if not np.all(np.isfinite(Lmat)):
        raise SingularTransform("control transform has non-finite entries")
    smin = la.svdvals(Lmat)[-1]
    if not smin > 0:
        raise SingularTransform(f"smallest singular value {smin:.3e}")
    return float(smin**2)
