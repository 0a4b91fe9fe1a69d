"""Backward Lyapunov-type equations for a fixed feedback.

For a feedback ``Theta`` the value of the closed-loop quadratic cost is
carried by ``P`` solving

    P' + P(A + A1 + B Theta) + (A + A1 + B Theta)'P
       + (C + D Theta)'P(C + D Theta) + Theta'R Theta + Q = 0,   P(T) = G.

In finite dimension the mild (variation-of-constants) solution and the
classical solution coincide, so the ODE is integrated directly.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, NonFinite
from .spectral import Scenario, TimeGrid

log = logging.getLogger(__name__)

PSD_TOL = 1e-8


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True, eq=False)
class MatrixPath:
    """One matrix per grid node."""

    grid: TimeGrid
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] != self.grid.m + 1:
            raise DimensionMismatch("MatrixPath needs one matrix per node")
        if self.symmetric and v.size:
            dev = np.abs(v - np.swapaxes(v, 1, 2)).max()
            if dev > 1e-10:
                raise ValueError(f"path flagged symmetric but asymmetry is {dev:.2e}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, i):
        return self.values[i]

    @property
    def start(self) -> np.ndarray:
        return self.values[0]

    def min_eig(self) -> np.ndarray:
        """Smallest eigenvalue at every node (symmetric paths)."""
        return np.linalg.eigvalsh(self.values)[:, 0]

    def sup_norm(self) -> float:
        return float(np.linalg.norm(self.values, axis=(1, 2)).max())

    def write_csv(self, fh, name: str = "P"):
        write_paths_csv(fh, self.grid, {name: self.values})


def write_paths_csv(fh, grid: TimeGrid, paths: dict):
    """Write node time plus row-major entries of each named path."""
    w = csv.writer(fh, lineterminator="\n")
    header = ["time"]
    for name, arr in paths.items():
        r, c = arr.shape[1:]
        header += [f"{name}[{a},{b}]" for a in range(r) for b in range(c)]
    w.writerow(header)
    for i, t in enumerate(grid.nodes):
        row = [_fmt(t)]
        for arr in paths.values():
            row += [_fmt(x) for x in arr[i].ravel()]
        w.writerow(row)


@dataclass(frozen=True, eq=False)
class FeedbackPath:
    """Feedback gains ``Theta(s)`` of shape (k, n) at each node.

    ``stages`` optionally gives, per cell, the gains at the left node,
    midpoint and right node (shape (m, 3, k, n)); the integrators use them
    for the RK4 stage evaluations.  Without it the midpoint gain is the
    average of the two node gains.
    """

    grid: TimeGrid
    values: np.ndarray
    stages: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] != self.grid.m + 1:
            raise DimensionMismatch("FeedbackPath needs one gain per node")
        if not np.all(np.isfinite(v)):
            raise NonFinite("feedback has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.stages is not None:
            st = np.array(self.stages, dtype=float)
            if st.shape != (self.grid.m, 3) + v.shape[1:]:
                raise DimensionMismatch("stage gains have the wrong shape")
            st.setflags(write=False)
            object.__setattr__(self, "stages", st)

    @classmethod
    def zeros(cls, grid: TimeGrid, k: int, n: int) -> "FeedbackPath":
        return cls(grid, np.zeros((grid.m + 1, k, n)))

    @classmethod
    def constant(cls, grid: TimeGrid, theta) -> "FeedbackPath":
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return cls(grid, np.broadcast_to(theta, (grid.m + 1,) + theta.shape))

    @property
    def shape(self):
        return self.values.shape[1:]

    def stage_values(self) -> np.ndarray:
        if self.stages is not None:
            return self.stages
        left, right = self.values[:-1], self.values[1:]
        return np.stack([left, 0.5 * (left + right), right], axis=1)


def closed_loop_stage_data(sc: Scenario, theta_stages: np.ndarray):
    """Per-cell stage matrices ``A1 + B Theta``, ``C + D Theta`` and
    ``Theta' R Theta + Q`` (each shaped (m, 3, n, n))."""
    c = sc.coeffs
    cell = slice(0, sc.grid.m)
    A1, B, C, D = (getattr(c, x)[cell, None] for x in ("A1", "B", "C", "D"))
    Q, R = c.Q[cell, None], c.R[cell, None]
    M = A1 + B @ theta_stages
    Cc = C + D @ theta_stages
    W = np.swapaxes(theta_stages, -1, -2) @ R @ theta_stages + Q
    W = 0.5 * (W + np.swapaxes(W, -1, -2))
    return (np.ascontiguousarray(M), np.ascontiguousarray(Cc),
            np.ascontiguousarray(W))


def solve_lyapunov_general(lam, grid: TimeGrid, M, Cc, W, G) -> MatrixPath:
    """Solve ``P' + P(A+M) + (A+M)'P + Cc'P Cc + W = 0``, ``P(T) = G``.

    ``M``, ``Cc``, ``W`` are per-cell stage arrays of shape (m, 3, n, n).
    """
    P, bad = _kernels.lyapunov_sweep(
        np.asarray(lam, dtype=float), grid.dt, np.array(G, dtype=float),
        np.ascontiguousarray(M, dtype=float), np.ascontiguousarray(Cc, dtype=float),
        np.ascontiguousarray(W, dtype=float))
    if bad >= 0:
        raise NonFinite(f"Lyapunov solution overflowed at node {bad}", node=bad)
    return MatrixPath(grid, P, symmetric=True)


def solve_lyapunov(sc: Scenario, theta: FeedbackPath | None = None) -> MatrixPath:
    """Cost-to-go of the feedback ``theta`` (zero feedback when omitted).

    RK4 in Lawson form on the scenario grid; the diagonal generator is
    propagated exactly.  Pick ``m >= 10 max|lambda_j| (T - t0)`` for the
    non-stiff remainder to be resolved.
    """
    if theta is None:
        theta = FeedbackPath.zeros(sc.grid, sc.k, sc.n)
    if theta.grid != sc.grid:
        raise DimensionMismatch("feedback grid differs from scenario grid")
    if theta.shape != (sc.k, sc.n):
        raise DimensionMismatch(f"feedback shape {theta.shape}, expected {(sc.k, sc.n)}")
    M, Cc, W = closed_loop_stage_data(sc, theta.stage_values())
    return solve_lyapunov_general(sc.lam, sc.grid, M, Cc, W, sc.coeffs.G)


def lyapunov_rhs_nodes(sc: Scenario, P: np.ndarray, theta_nodes: np.ndarray,
                       cells=None) -> np.ndarray:
    """``dP/ds`` at nodes from the Lyapunov equation (vectorized).

    ``cells`` selects which node's coefficients to use per entry (defaults
    to the node itself).
    """
    c = sc.coeffs
    idx = np.arange(P.shape[0]) if cells is None else np.asarray(cells)
    lam = sc.lam
    A1, B, C, D, Q, R = (getattr(c, x)[idx] for x in ("A1", "B", "C", "D", "Q", "R"))
    Mt = A1 + B @ theta_nodes
    Ct = C + D @ theta_nodes
    thT = np.swapaxes(theta_nodes, -1, -2)
    PM = P @ Mt + lam[None, :, None] * P
    F = PM + np.swapaxes(PM, -1, -2) + np.swapaxes(Ct, -1, -2) @ P @ Ct \
        + thT @ R @ theta_nodes + Q
    return -F


def lyapunov_psd_check(P: MatrixPath, coeffs=None, tol: float = PSD_TOL) -> bool:
    """True iff ``lambda_min(P(s)) >= -tol`` at every node.

    Intended for solutions with ``G >= 0`` and ``Theta'R Theta + Q >= 0``,
    where positivity is guaranteed; a failure is logged with its node.
    """
    eig = P.min_eig()
    node = int(np.argmin(eig))
    if eig[node] < -tol:
        log.warning("P not positive semidefinite at node %d (lambda_min = %.3e)",
                    node, eig[node])
        return False
    return True
