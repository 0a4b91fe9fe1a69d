"""Compiled backward sweeps for the Lyapunov and Riccati matrix ODEs.

Both sweeps integrate in reversed time ``tau = T - s`` with the Lawson
(integrating-factor) form of classical RK4: the diagonal generator enters
only through ``exp(lambda h)`` and ``exp(lambda h / 2)``, so the stiff part
is propagated exactly and the remaining right-hand side sees coefficients
that are constant on each cell.

Stage index convention for per-cell arrays of shape (m, 3, ...):
0 = left node ``s_i``, 1 = midpoint, 2 = right node ``s_{i+1}``.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _conj(E, X):
    # E X E with E diagonal
    n = X.shape[0]
    out = np.empty_like(X)
    for a in range(n):
        for b in range(n):
            out[a, b] = E[a] * X[a, b] * E[b]
    return out


@njit(cache=True)
def _lyap_rhs(P, M, Cc, W):
    PM = P @ M
    return PM + PM.T + Cc.T @ P @ Cc + W


@njit(cache=True)
def lyapunov_sweep(lam, h, G, M, Cc, W):
    """Backward Lawson-RK4 for ``P' + P(A+M) + (A+M)'P + Cc'PCc + W = 0``.

    Returns ``(P, bad)`` where ``bad`` is -1 on success or the node index at
    which a non-finite value appeared.
    """
    m = M.shape[0]
    n = G.shape[0]
    P = np.zeros((m + 1, n, n))
    E1 = np.exp(lam * h)
    E2 = np.exp(lam * (0.5 * h))
    P[m] = G
    y = G.copy()
    for i in range(m - 1, -1, -1):
        k1 = _lyap_rhs(y, M[i, 2], Cc[i, 2], W[i, 2])
        k2 = _lyap_rhs(_conj(E2, y + (0.5 * h) * k1), M[i, 1], Cc[i, 1], W[i, 1])
        k3 = _lyap_rhs(_conj(E2, y) + (0.5 * h) * k2, M[i, 1], Cc[i, 1], W[i, 1])
        k4 = _lyap_rhs(_conj(E1, y) + h * _conj(E2, k3), M[i, 0], Cc[i, 0], W[i, 0])
        y = _conj(E1, y) + (h / 6.0) * (_conj(E1, k1) + 2.0 * _conj(E2, k2 + k3) + k4)
        y = 0.5 * (y + y.T)
        if not np.all(np.isfinite(y)):
            return P, i
        P[i] = y
    return P, -1


@njit(cache=True)
def _pinv_sym(K, rank_tol):
    mu, V = np.linalg.eigh(K)
    scale = max(1.0, np.max(np.abs(mu)))
    inv = np.zeros_like(mu)
    for a in range(mu.size):
        if abs(mu[a]) > rank_tol * scale:
            inv[a] = 1.0 / mu[a]
    return (V * inv) @ V.T


@njit(cache=True)
def _ric_rhs(P, A1, B, C, D, Q, R, rank_tol):
    PA = P @ A1
    PC = P @ C
    L = B.T @ P + D.T @ PC
    K = R + D.T @ P @ D
    K = 0.5 * (K + K.T)
    F = PA + PA.T + C.T @ PC + Q - L.T @ _pinv_sym(K, rank_tol) @ L
    return 0.5 * (F + F.T)


@njit(cache=True)
def riccati_sweep(lam, h, G, A1, B, C, D, Q, R, rank_tol):
    """Backward Lawson-RK4 for the Riccati equation with ``K`` pseudo-inverted.

    Coefficient arrays are per node; cell ``i`` uses the node-``i`` values.
    """
    m = A1.shape[0] - 1
    n = G.shape[0]
    P = np.zeros((m + 1, n, n))
    E1 = np.exp(lam * h)
    E2 = np.exp(lam * (0.5 * h))
    P[m] = G
    y = G.copy()
    for i in range(m - 1, -1, -1):
        a1, b, c, d, q, r = A1[i], B[i], C[i], D[i], Q[i], R[i]
        k1 = _ric_rhs(y, a1, b, c, d, q, r, rank_tol)
        k2 = _ric_rhs(_conj(E2, y + (0.5 * h) * k1), a1, b, c, d, q, r, rank_tol)
        k3 = _ric_rhs(_conj(E2, y) + (0.5 * h) * k2, a1, b, c, d, q, r, rank_tol)
        k4 = _ric_rhs(_conj(E1, y) + h * _conj(E2, k3), a1, b, c, d, q, r, rank_tol)
        y = _conj(E1, y) + (h / 6.0) * (_conj(E1, k1) + 2.0 * _conj(E2, k2 + k3) + k4)
        y = 0.5 * (y + y.T)
        if not np.all(np.isfinite(y)):
            return P, i
        P[i] = y
    return P, -1
