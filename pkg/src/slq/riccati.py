"""Riccati solutions: successive approximation, direct integration, certificates.

The Riccati equation on ``[t0, T]`` is

    P' + P(A+A1) + (A+A1)'P + C'PC + Q - L' K^+ L = 0,    P(T) = G,
    K = R + D'PD,    L = B'P + D'PC,

and the feedback ``Theta = -K^+ L`` is optimal whenever ``P`` is regular.

``riccati_iterate`` builds the solution as the limit of Lyapunov solves,
each one using the feedback induced by the previous iterate.  Starting from
the zero-feedback cost ``P_0`` the iterates decrease monotonically and
converge at a factorial rate as long as every ``K_j`` stays uniformly
positive; a ``K_j`` that loses positivity is reported as ``KNotInvertible``
and is evidence that the cost is not uniformly convex.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (ConfigError, KNotInvertible, MaxIterExceeded,
                     MonotonicityViolation, NonFinite, NotCertified)
from .lyapunov import (FeedbackPath, MatrixPath, lyapunov_rhs_nodes,
                       solve_lyapunov, write_paths_csv)
from .spectral import Scenario

log = logging.getLogger(__name__)

RANK_TOL = 1e-10
MONO_TOL = 1e-8
REGULAR_TOL = 1e-8

STRONGLY_REGULAR = "StronglyRegular"
REGULAR = "Regular"
NOT_CERTIFIED = "NotCertified"


# ---------------------------------------------------------------------------
# Moore-Penrose inverse


@dataclass(frozen=True, eq=False)
class PseudoInverse:
    matrix: np.ndarray
    rank: int
    rank_tol: float


def pseudo_inverse(F, rank_tol: float = RANK_TOL) -> PseudoInverse:
    """Moore-Penrose inverse of a symmetric matrix via its eigendecomposition.

    Eigenvalues with ``|mu| <= rank_tol * max(1, max|mu|)`` count as zero.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    F = 0.5 * (F + F.T)
    mu, V = np.linalg.eigh(F)
    keep = np.abs(mu) > rank_tol * max(1.0, np.abs(mu).max(initial=0.0))
    inv = np.zeros_like(mu)
    inv[keep] = 1.0 / mu[keep]
    return PseudoInverse((V * inv) @ V.T, int(keep.sum()), rank_tol)


def pinv_batch(F, rank_tol: float = RANK_TOL):
    """Stacked symmetric pseudo-inverses; returns (pinv, rank) arrays."""
    F = 0.5 * (F + np.swapaxes(F, -1, -2))
    mu, V = np.linalg.eigh(F)
    scale = np.maximum(1.0, np.abs(mu).max(axis=-1, keepdims=True))
    keep = np.abs(mu) > rank_tol * scale
    inv = np.where(keep, 1.0 / np.where(keep, mu, 1.0), 0.0)
    return (V * inv[..., None, :]) @ np.swapaxes(V, -1, -2), keep.sum(axis=-1)


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class RegularityCertificate:
    """Outcome of the regularity tests on a Riccati path.

    ``kind`` is one of ``StronglyRegular``, ``Regular``, ``NotCertified``;
    ``lam`` is the positivity margin of ``K`` for strongly regular paths.
    ``gain_sup`` records ``sup |K^+ L|`` (square integrability is automatic
    on a finite grid) and ``nullity`` the largest null-space dimension of
    ``K``, i.e. the freedom left in the optimal feedback family.
    """

    kind: str
    range_defect: float
    kmin: float
    pmin: float
    lam: float | None = None
    reason: str | None = None
    gain_sup: float = 0.0
    nullity: int = 0

    @property
    def certified(self) -> bool:
        return self.kind in (STRONGLY_REGULAR, REGULAR)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "kmin": self.kmin,
                "pmin": self.pmin, "range_defect": self.range_defect,
                "gain_sup": self.gain_sup, "nullity": self.nullity,
                "reason": self.reason}


def node_KL(sc: Scenario, P: np.ndarray):
    """``K = R + D'PD`` and ``L = B'P + D'PC`` at every node."""
    c = sc.coeffs
    DT = np.swapaxes(c.D, 1, 2)
    PD = P @ c.D
    K = c.R + DT @ PD
    K = 0.5 * (K + np.swapaxes(K, 1, 2))
    L = np.swapaxes(c.B, 1, 2) @ P + DT @ P @ c.C
    return K, L


def certify(P: MatrixPath, sc: Scenario, rank_tol: float = RANK_TOL) -> RegularityCertificate:
    """Classify a symmetric path as strongly regular, regular or neither."""
    Pv = P.values
    K, L = node_KL(sc, Pv)
    Kp, rank = pinv_batch(K, rank_tol)
    kmin = float(np.linalg.eigvalsh(K)[:, 0].min())
    pmin = float(np.linalg.eigvalsh(Pv)[:, 0].min())
    eye = np.eye(sc.k)
    range_defect = float(np.linalg.norm((eye - K @ Kp) @ L, axis=(1, 2)).max())
    gain_sup = float(np.linalg.norm(Kp @ L, axis=(1, 2)).max())
    nullity = int(sc.k - rank.min())
    common = dict(range_defect=range_defect, kmin=kmin, pmin=pmin,
                  gain_sup=gain_sup, nullity=nullity)
    kscale = max(1.0, float(np.abs(K).max()))
    if kmin > rank_tol * kscale:
        return RegularityCertificate(STRONGLY_REGULAR, lam=kmin, **common)
    if kmin < -REGULAR_TOL:
        return RegularityCertificate(NOT_CERTIFIED, reason="K not positive semidefinite",
                                     **common)
    if range_defect > REGULAR_TOL:
        return RegularityCertificate(NOT_CERTIFIED, reason="range condition violated",
                                     **common)
    return RegularityCertificate(REGULAR, **common)


# ---------------------------------------------------------------------------
# solutions


@dataclass(eq=False)
class RiccatiSolution:
    """A Riccati path with its derived gains and certificate."""

    scenario: Scenario
    P: MatrixPath
    K: np.ndarray
    L: np.ndarray
    theta: FeedbackPath
    certificate: RegularityCertificate
    iterations: int
    residual: float
    truncation_estimate: float
    method: str
    deltas: list = field(default_factory=list)
    kmins: list = field(default_factory=list)
    pmins: list = field(default_factory=list)
    iterates: list | None = None

    def value(self, eta=None) -> float:
        """``<P(t0) eta, eta>``, the optimal cost from ``(t0, eta)``."""
        eta = self.scenario.eta if eta is None else np.asarray(eta, dtype=float)
        return float(eta @ self.P.start @ eta)

    @property
    def residual_ok(self) -> bool:
        return self.residual <= max(1e-9, 10.0 * self.truncation_estimate)

    def summary(self) -> dict:
        out = {"schema": 1, "method": self.method}
        out.update(self.certificate.to_dict())
        out.update(iterations=self.iterations, residual=self.residual,
                   truncation_estimate=self.truncation_estimate,
                   value=self.value(), deltas=list(self.deltas))
        return out

    def write(self, out_dir):
        """Write ``riccati.csv`` (P, K, L, Theta paths) and ``certificate.json``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "riccati.csv", "w", newline="") as fh:
            write_paths_csv(fh, self.P.grid, {"P": self.P.values, "K": self.K,
                                              "L": self.L, "Theta": self.theta.values})
        with open(out_dir / "certificate.json", "w") as fh:
            json.dump(_jsonable(self.summary()), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def riccati_rhs_nodes(sc: Scenario, P: np.ndarray, cells=None, rank_tol=RANK_TOL):
    """``dP/ds`` from the Riccati equation at a stack of matrices."""
    c = sc.coeffs
    idx = np.arange(P.shape[0]) if cells is None else np.asarray(cells)
    A1, B, C, D, Q, R = (getattr(c, x)[idx] for x in ("A1", "B", "C", "D", "Q", "R"))
    lam = sc.lam
    DT = np.swapaxes(D, 1, 2)
    K = R + DT @ P @ D
    L = np.swapaxes(B, 1, 2) @ P + DT @ P @ C
    Kp, _ = pinv_batch(K, rank_tol)
    PA = P @ A1 + lam[None, :, None] * P
    F = PA + np.swapaxes(PA, 1, 2) + np.swapaxes(C, 1, 2) @ P @ C + Q \
        - np.swapaxes(L, 1, 2) @ Kp @ L
    return -F


def _residual(sc: Scenario, P: np.ndarray, rank_tol: float):
    """Max interior-node Riccati residual with centered ``dP/ds`` and a
    step-doubling estimate of the difference-quotient error."""
    m, h = sc.grid.m, sc.grid.dt
    rhs = riccati_rhs_nodes(sc, P, rank_tol=rank_tol)
    jumps = sc.coeffs.jump_nodes()
    ok = np.ones(m + 1, dtype=bool)
    ok[:2] = ok[-2:] = False
    for shift in range(-2, 3):
        ok &= ~np.roll(jumps, shift)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return 0.0, 0.0
    d1 = (P[idx + 1] - P[idx - 1]) / (2 * h)
    d2 = (P[idx + 2] - P[idx - 2]) / (4 * h)
    res = np.linalg.norm(d1 - rhs[idx], axis=(1, 2)).max()
    trunc = np.linalg.norm(d1 - d2, axis=(1, 2)).max()
    return float(res), float(trunc)


def _stage_P(sc: Scenario, P: np.ndarray, dP: np.ndarray):
    """Per-cell (left, mid, right) values of ``P``; the midpoint comes from
    cubic Hermite interpolation with the cell-wise derivatives ``dP`` of
    shape (m, 2, n, n) (left and right ends)."""
    h = sc.grid.dt
    left, right = P[:-1], P[1:]
    mid = 0.5 * (left + right) + (h / 8.0) * (dP[:, 0] - dP[:, 1])
    return np.stack([left, mid, right], axis=1)


def _stage_KL(sc: Scenario, Pst: np.ndarray):
    c = sc.coeffs
    m = sc.grid.m
    D = c.D[:m, None]
    DT = np.swapaxes(D, -1, -2)
    K = c.R[:m, None] + DT @ Pst @ D
    K = 0.5 * (K + np.swapaxes(K, -1, -2))
    L = np.swapaxes(c.B[:m, None], -1, -2) @ Pst + DT @ Pst @ c.C[:m, None]
    return K, L


def _check_grid(sc: Scenario):
    if sc.grid.m < 4:
        raise ConfigError("Riccati solvers need a grid with m >= 4 steps")


def _k_floor(K, rank_tol):
    return rank_tol * max(1.0, float(np.abs(K).max()))


def _finish(sc, P, theta, method, rank_tol, **extra) -> RiccatiSolution:
    path = MatrixPath(sc.grid, P, symmetric=True)
    K, L = node_KL(sc, P)
    cert = certify(path, sc, rank_tol)
    res, trunc = _residual(sc, P, rank_tol)
    return RiccatiSolution(sc, path, K, L, theta, cert, residual=res,
                           truncation_estimate=trunc, method=method, **extra)


def _gains(sc, P, theta_stages_prev, rank_tol, j):
    """Feedback ``-K^{-1}L`` from iterate ``P`` at nodes and RK4 stages.

    Raises KNotInvertible when ``K`` fails the positivity floor anywhere.
    """
    m = sc.grid.m
    Kn, Ln = node_KL(sc, P)
    eig = np.linalg.eigvalsh(Kn)[:, 0]
    node = int(np.argmin(eig))
    if eig[node] <= _k_floor(Kn, rank_tol):
        raise KNotInvertible(j, node, float(eig[node]))
    cells = np.arange(m)
    dP = np.stack([
        lyapunov_rhs_nodes(sc, P[:-1], theta_stages_prev[:, 0], cells),
        lyapunov_rhs_nodes(sc, P[1:], theta_stages_prev[:, 2], cells),
    ], axis=1)
    Ks, Ls = _stage_KL(sc, _stage_P(sc, P, dP))
    seig = np.linalg.eigvalsh(Ks)[..., 0]
    cell, st = np.unravel_index(int(np.argmin(seig)), seig.shape)
    if seig[cell, st] <= _k_floor(Ks, rank_tol):
        raise KNotInvertible(j, int(cell + (st == 2)), float(seig[cell, st]))
    theta_nodes = -np.linalg.solve(Kn, Ln)
    theta_stages = -np.linalg.solve(Ks, Ls)
    return theta_nodes, theta_stages, float(eig[node])


def riccati_iterate(sc: Scenario, tol: float = 1e-9, max_iter: int = 50,
                    rank_tol: float = RANK_TOL, keep_iterates: bool = False,
                    check_monotone: bool = True) -> RiccatiSolution:
    """Successive approximation by Lyapunov solves.

    ``P_0`` is the cost-to-go of zero feedback; then for ``j = 0, 1, ...``

        K_j = R + D'P_jD,  L_j = B'P_j + D'P_jC,  Theta_j = -K_j^{-1} L_j,

    and ``P_{j+1}`` solves the Lyapunov equation for ``Theta_j``.  Iteration
    stops when ``sup_s |P_j(s) - P_{j+1}(s)|_F <= tol``.

    Raises
    ------
    KNotInvertible
        ``lambda_min(K_j) <= rank_tol`` at some node or stage.
    MaxIterExceeded
        ``tol`` not reached within ``max_iter`` updates.
    MonotonicityViolation
        ``P_j - P_{j+1}`` has an eigenvalue below ``-1e-8``.
    """
    if tol <= 0:
        raise ConfigError("tol must be positive")
    _check_grid(sc)
    m, k, n = sc.grid.m, sc.k, sc.n
    stages_prev = np.zeros((m, 3, k, n))
    P = solve_lyapunov(sc).values
    deltas, kmins, pmins = [], [], []
    iterates = [P] if keep_iterates else None
    for j in range(max_iter):
        theta_nodes, theta_stages, kmin = _gains(sc, P, stages_prev, rank_tol, j)
        kmins.append(kmin)
        pmins.append(float(np.linalg.eigvalsh(P)[:, 0].min()))
        theta = FeedbackPath(sc.grid, theta_nodes, stages=theta_stages)
        P_next = solve_lyapunov(sc, theta).values
        diff = P - P_next
        delta = float(np.linalg.norm(diff, axis=(1, 2)).max())
        deltas.append(delta)
        if check_monotone:
            eig = np.linalg.eigvalsh(diff)[:, 0]
            node = int(np.argmin(eig))
            if eig[node] < -MONO_TOL:
                raise MonotonicityViolation(j, node, float(eig[node]))
        log.debug("iteration %d: sup|P_j - P_j+1| = %.3e, kmin = %.6g", j, delta, kmin)
        P, stages_prev = P_next, theta_stages
        if keep_iterates:
            iterates.append(P)
        if delta <= tol:
            break
    else:
        raise MaxIterExceeded(max_iter, deltas[-1] if deltas else np.inf)
    theta_nodes, theta_stages, kmin = _gains(sc, P, stages_prev, rank_tol, len(deltas))
    kmins.append(kmin)
    pmins.append(float(np.linalg.eigvalsh(P)[:, 0].min()))
    theta = FeedbackPath(sc.grid, theta_nodes, stages=theta_stages)
    return _finish(sc, P, theta, "iterate", rank_tol, iterations=len(deltas),
                   deltas=deltas, kmins=kmins, pmins=pmins, iterates=iterates)


def riccati_direct(sc: Scenario, rank_tol: float = RANK_TOL) -> RiccatiSolution:
    """Integrate the Riccati equation itself (``K`` pseudo-inverted per stage).

    Serves as an independent check on ``riccati_iterate``.  Because it does
    not require ``K`` to be invertible it can be attempted on merely regular
    problems, but convergence there is not guaranteed and the result should
    be checked with ``certify``.
    """
    _check_grid(sc)
    c = sc.coeffs
    args = [np.ascontiguousarray(getattr(c, x)) for x in ("A1", "B", "C", "D", "Q", "R")]
    P, bad = _kernels.riccati_sweep(np.asarray(sc.lam), sc.grid.dt, np.array(c.G),
                                    *args, rank_tol)
    if bad >= 0:
        raise NonFinite(f"Riccati solution blew up at node {bad}", node=bad)
    m = sc.grid.m
    cells = np.arange(m)
    dP = np.stack([riccati_rhs_nodes(sc, P[:-1], cells, rank_tol),
                   riccati_rhs_nodes(sc, P[1:], cells, rank_tol)], axis=1)
    Ks, Ls = _stage_KL(sc, _stage_P(sc, P, dP))
    Kn, Ln = node_KL(sc, P)
    theta = FeedbackPath(sc.grid, -pinv_batch(Kn, rank_tol)[0] @ Ln,
                         stages=-pinv_batch(Ks, rank_tol)[0] @ Ls)
    return _finish(sc, P, theta, "direct", rank_tol, iterations=0)


def feedback_from(sol: RiccatiSolution) -> FeedbackPath:
    """The minimal-norm optimal feedback ``-K^+ L`` of a certified solution."""
    if not sol.certificate.certified:
        raise NotCertified(f"Riccati path not certified: {sol.certificate.reason}")
    return sol.theta
