"""Reference scenarios used by the tests, demos and shipped scenario files."""
import numpy as np

from .spectral import make_scenario


def scalar_riccati(m=10_000, **kw):
    """``dx = u ds``, cost ``x(T)^2 + int u^2``; ``P(s) = 1/(1 + T - s)``."""
    kw.setdefault("eta", [1.0])
    return make_scenario([0.0], T=1.0, m=m, B=1.0, R=1.0, G=1.0, **kw)


def scalar_riccati_closed_form(s, T=1.0):
    return 1.0 / (1.0 + T - np.asarray(s))


def indefinite_failure(m=100, **kw):
    """``R = -1, D = 1, G = 1/2``: ``K(T) = -1/2`` so no strongly regular solution."""
    return make_scenario([0.0], T=1.0, m=m, D=1.0, R=-1.0, G=0.5, **kw)


def indefinite_convex(m=200, **kw):
    """``R = -1/2, D = 1, G = 1``: ``E x(T)^2 = |u|^2`` makes the cost
    ``|u|^2 / 2`` although ``R`` is negative."""
    return make_scenario([0.0], T=1.0, m=m, D=1.0, R=-0.5, G=1.0, **kw)


def heat_modes(n=8, k=2, m=640, T=1.0, seed=20240611, mc_paths=100_000,
               decoupled=False):
    """Galerkin modes of a 1-D heat equation with multiplicative noise.

    ``lambda_j = -j^2``.  Two distributed actuators with profiles decaying
    like ``1/j``, a smooth reaction term ``A1`` and noise coupling ``C``,
    control-dependent noise ``D``.  Weights are positive definite.  With
    ``decoupled=True`` every coupling is diagonal (``k`` is set to ``n``).
    """
    j = np.arange(1, n + 1, dtype=float)
    lam = -j**2
    if decoupled:
        k = n
        A1 = np.diag(0.3 / j)
        B = np.diag(1.0 / j)
        C = np.diag(0.2 / j)
        D = np.diag(0.2 / j)
    else:
        jj, ll = np.meshgrid(j, j, indexing="ij")
        A1 = 0.4 / ((1.0 + np.abs(jj - ll)) * np.sqrt(jj * ll))
        C = 0.3 / (jj + ll)
        B = np.empty((n, k))
        D = np.empty((n, k))
        for c in range(k):
            B[:, c] = (-1.0) ** (c * (j + 1)) / j**(1 + 0.5 * c)
            D[:, c] = 0.3 * (-1.0) ** (c * j) / j**(1 + c)
    Q = np.diag(1.0 / j)
    R = 0.5 * np.eye(k)
    G = np.eye(n)
    eta = 1.0 / j
    return make_scenario(lam, T=T, m=m, A1=A1, B=B, C=C, D=D, Q=Q, R=R, G=G,
                         eta=eta, seed=seed, mc_paths=mc_paths)


def classical(m=200, seed=7, **kw):
    """Two modes, classical data ``G, Q >= 0``, ``R >= 2 I`` with noise coupling."""
    return make_scenario(
        [-1.0, 0.5], T=1.0, m=m, k=2,
        A1=[[0.0, 0.3], [-0.2, 0.1]],
        B=[[1.0, 0.0], [0.5, 1.0]],
        C=[[0.2, 0.1], [0.0, 0.3]],
        D=[[0.4, 0.0], [0.1, 0.2]],
        Q=[[1.0, 0.2], [0.2, 0.5]],
        R=[[2.0, 0.0], [0.0, 3.0]],
        G=np.eye(2), eta=[1.0, -0.5], seed=seed, **kw)


def noisy_scalar(m=400, seed=11, **kw):
    """Scalar problem with state and control noise; strongly regular."""
    kw.setdefault("eta", [1.0])
    return make_scenario([-0.5], T=1.0, m=m, A1=0.2, B=1.0, C=0.4, D=0.5,
                         Q=1.0, R=0.5, G=2.0, seed=seed, **kw)
