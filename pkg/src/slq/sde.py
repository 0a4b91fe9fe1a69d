"""Monte Carlo and moment-equation evaluation of the quadratic cost.

Paths follow the exponential Euler-Maruyama scheme

    x_{i+1} = exp(A dt) [x_i + dt (A1 x_i + B u_i) + (C x_i + D u_i) dW_i]

with one scalar Brownian motion.  Increments for path ``p`` come from a
Philox stream keyed by the seed with counter offset ``p``, so an ensemble
is bit-identical whatever the chunking or number of worker threads.

Every simulation also runs a coupled half-resolution path (pairs of fine
increments summed) when ``m`` is even.  The per-path Richardson combination
``2 J_h - J_2h`` removes the first-order weak error of the scheme; z-scores
use that estimate and its own sample standard error.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonDeterministicPolicy, NonFinite
from .lyapunov import FeedbackPath
from .riccati import RiccatiSolution, feedback_from, riccati_rhs_nodes, _stage_KL, _stage_P
from .spectral import Scenario

CHUNK = 4096
NOISE_CACHE_LIMIT = 2 * 10**7  # increments kept in memory during verification
Z_LIMIT = 4.0


def default_threads() -> int:
    return max(1, int(os.environ.get("SLQ_THREADS", "1")))


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True, eq=False)
class ControlPolicy:
    """``u_i = Theta_i x_i + v_i``; either part may be absent.

    Use the constructors :func:`OpenLoop`, :func:`Feedback` and
    :func:`FeedbackPlusOpenLoop`.
    """

    theta: FeedbackPath | None = None
    u: np.ndarray | None = None

    @property
    def kind(self) -> str:
        if self.theta is None:
            return "OpenLoop"
        return "Feedback" if self.u is None else "FeedbackPlusOpenLoop"

    @property
    def deterministic(self) -> bool:
        return self.theta is None

    def check(self, sc: Scenario):
        if self.theta is not None:
            if self.theta.grid != sc.grid:
                raise DimensionMismatch("policy gain grid differs from scenario grid")
            if self.theta.shape != (sc.k, sc.n):
                raise DimensionMismatch("policy gain has the wrong shape")
        if self.u is not None and self.u.shape != (sc.grid.m + 1, sc.k):
            raise DimensionMismatch(
                f"open-loop control has shape {self.u.shape}, "
                f"expected {(sc.grid.m + 1, sc.k)}")

    def control(self, i: int, x: np.ndarray) -> np.ndarray:
        """Control at node ``i`` for the states ``x`` (paths, n)."""
        if self.theta is None:
            return np.broadcast_to(self.u[i], (x.shape[0], self.u.shape[1]))
        out = x @ self.theta.values[i].T
        if self.u is not None:
            out += self.u[i]
        return out


def _node_control(u, m):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[0] == m:
        u = np.vstack([u, u[-1:]])
    return u


def OpenLoop(u, m: int | None = None) -> ControlPolicy:
    """Deterministic control; ``u`` has one row per node (or per cell)."""
    u = np.asarray(u, dtype=float)
    if m is not None:
        u = _node_control(u, m)
    u.setflags(write=False)
    return ControlPolicy(u=u)


def Feedback(theta: FeedbackPath) -> ControlPolicy:
    return ControlPolicy(theta=theta)


def FeedbackPlusOpenLoop(theta: FeedbackPath, u) -> ControlPolicy:
    u = _node_control(u, theta.grid.m)
    u.setflags(write=False)
    return ControlPolicy(theta=theta, u=u)


# ---------------------------------------------------------------------------
# ensembles


@dataclass(eq=False)
class PathEnsemble:
    """Result of :func:`simulate`.

    Terminal states and per-path total costs are always kept; full state
    and control trajectories only with ``keep_paths=True``.  ``deviation`` is
    ``sum_i dt <K_i w_i, w_i>`` with ``w_i = u_i - Theta_i x_i`` when a
    reference Riccati solution was supplied.  The ``coarse_*`` arrays hold
    the coupled half-resolution run.
    """

    n_paths: int
    seed: int
    terminal: np.ndarray
    costs: np.ndarray
    states: np.ndarray | None = None
    controls: np.ndarray | None = None
    deviation: np.ndarray | None = None
    coarse_terminal: np.ndarray | None = None
    coarse_costs: np.ndarray | None = None
    coarse_deviation: np.ndarray | None = None


ROUNDOFF = 1e-12


@dataclass(frozen=True)
class CostEstimate:
    """Monte Carlo cost with its standard error.

    ``mean`` and ``stderr`` are the plain Euler sample mean and
    ``std / sqrt(n_paths)``.  When the coupled half-resolution run exists
    (even ``m``), ``extrapolated`` is the mean of the per-path Richardson
    combination ``2 J_h - J_2h``, which cancels the first-order weak error,
    with its own sample standard error ``extrapolated_stderr``; ``bias`` is
    ``|mean(J_h) - mean(J_2h)|``.  ``exact`` is the moment-equation value
    when the policy is deterministic.
    """

    mean: float
    stderr: float
    n_paths: int
    exact: float | None = None
    bias: float | None = None
    extrapolated: float | None = None
    extrapolated_stderr: float | None = None

    @property
    def estimate(self) -> float:
        """Best available estimate: extrapolated when possible."""
        return self.mean if self.extrapolated is None else self.extrapolated

    @property
    def scale(self) -> float:
        """Standard error of :attr:`estimate`, floored at the roundoff level
        so that a scheme reproducing the target exactly (zero sample
        variance) does not produce spurious z-scores."""
        se = self.stderr if self.extrapolated is None else self.extrapolated_stderr
        return float(max(se, ROUNDOFF * max(1.0, abs(self.estimate))))

    def z(self, target: float) -> float:
        return zscore(self.estimate - target, self.scale)

    def ci(self, level_z: float = 1.959963984540054):
        return self.estimate - level_z * self.scale, self.estimate + level_z * self.scale


def zscore(diff: float, scale: float) -> float:
    if scale > 0:
        return float(diff / scale)
    return 0.0 if diff == 0 else float(np.copysign(np.inf, diff))


def path_streams(seed: int, start: int, stop: int, m: int, dt: float) -> np.ndarray:
    """Brownian increments for paths ``start..stop-1`` (shape (paths, m))."""
    out = np.empty((stop - start, m))
    sq = np.sqrt(dt)
    for row, p in enumerate(range(start, stop)):
        gen = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, p]))
        out[row] = gen.standard_normal(m)
    return out * sq


def _fused(sc):
    """Per-node block matrix ``[[A1', C', Q], [B', D', 0]]`` so one product
    of ``[x, u]`` gives drift, diffusion and ``Q x``."""
    c = sc.coeffs
    n, k = sc.n, sc.k
    F = np.zeros((sc.grid.m + 1, n + k, 3 * n))
    F[:, :n, :n] = np.swapaxes(c.A1, 1, 2)
    F[:, :n, n:2 * n] = np.swapaxes(c.C, 1, 2)
    F[:, :n, 2 * n:] = c.Q
    F[:, n:, :n] = np.swapaxes(c.B, 1, 2)
    F[:, n:, n:2 * n] = np.swapaxes(c.D, 1, 2)
    return F


def _quad(x, M):
    return ((x @ M) * x).sum(axis=1)


@np.errstate(over="ignore", invalid="ignore")
def _sweep(sc, policy, x0, dW, stride, keep, ref, start, F):
    """Forward exponential Euler-Maruyama on every ``stride``-th node."""
    c = sc.coeffs
    m, n = sc.grid.m, sc.n
    h = sc.grid.dt * stride
    E = np.exp(sc.lam * h)
    if stride > 1:
        dW = dW.reshape(dW.shape[0], m // stride, stride).sum(axis=2)
    N = dW.shape[0]
    x = np.repeat(x0[None, :], N, axis=0)
    run = np.zeros(N)
    dev = np.zeros(N) if ref is not None else None
    states = controls = None
    if keep:
        states = np.empty((N, m + 1, n))
        controls = np.empty((N, m + 1, sc.k))
    for step, i in enumerate(range(0, m, stride)):
        u = policy.control(i, x)
        if keep:
            states[:, i], controls[:, i] = x, u
        Y = np.concatenate([x, u], axis=1) @ F[i]
        run += h * ((Y[:, 2 * n:] * x).sum(axis=1) + _quad(u, c.R[i]))
        if dev is not None:
            w = u - x @ ref[1][i].T
            dev += h * _quad(w, ref[0][i])
        x = E * (x + h * Y[:, :n] + Y[:, n:2 * n] * dW[:, step, None])
        if not np.isfinite(x).all():
            bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
            raise NonFinite(f"path {start + bad} blew up at node {i + stride}",
                            node=i + stride, path=start + bad)
    if keep:
        states[:, m] = x
        controls[:, m] = policy.control(m, x)
    term = _quad(x, c.G)
    return x, run, dev, states, controls, term


def simulate(sc: Scenario, policy: ControlPolicy, n_paths: int | None = None,
             seed: int | None = None, keep_paths: bool = False,
             threads: int | None = None, reference: RiccatiSolution | None = None,
             eta=None, noise_cache: dict | None = None) -> PathEnsemble:
    """Simulate ``n_paths`` controlled paths from ``eta`` (default ``sc.eta``).

    The control at node ``i`` is computed from ``x_i`` before the increment
    ``dW_i`` is drawn into the update, so every control is adapted.
    ``noise_cache`` (a dict) keeps the Brownian increments between calls
    sharing a seed, which saves regenerating them for common random numbers.
    """
    policy.check(sc)
    n_paths = sc.mc_paths if n_paths is None else int(n_paths)
    seed = sc.seed if seed is None else int(seed)
    threads = default_threads() if threads is None else max(1, int(threads))
    x0 = np.asarray(sc.eta if eta is None else eta, dtype=float)
    m = sc.grid.m
    coarse = m % 2 == 0 and m >= 2
    ref = None if reference is None else (reference.K, reference.theta.values)
    F = _fused(sc)

    def run_chunk(start):
        stop = min(start + CHUNK, n_paths)
        key = (seed, start, stop, m, sc.grid.dt)
        if noise_cache is not None and key in noise_cache:
            dW = noise_cache[key]
        else:
            dW = path_streams(seed, start, stop, m, sc.grid.dt)
            if noise_cache is not None:
                noise_cache[key] = dW
        fine = _sweep(sc, policy, x0, dW, 1, keep_paths, ref, start, F)
        crude = _sweep(sc, policy, x0, dW, 2, False, ref, start, F) if coarse else None
        return fine, crude

    starts = range(0, n_paths, CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, starts))
    else:
        parts = [run_chunk(s) for s in starts]

    def cat(idx, which=0):
        vals = [p[which][idx] for p in parts if p[which] is not None]
        if not vals or vals[0] is None:
            return None
        return np.concatenate(vals)

    return PathEnsemble(
        n_paths=n_paths, seed=seed, terminal=cat(0), costs=cat(1) + cat(5),
        states=cat(3), controls=cat(4), deviation=cat(2),
        coarse_terminal=cat(0, 1) if coarse else None,
        coarse_costs=(cat(1, 1) + cat(5, 1)) if coarse else None,
        coarse_deviation=cat(2, 1) if coarse else None,
    )


def path_costs(sc: Scenario, ensemble: PathEnsemble):
    """Per-path costs of the fine run and of the coupled coarse run (or None).

    The cost of a path is ``<G x(T), x(T)>`` plus the left-endpoint sum
    ``dt (<Q x_i, x_i> + <R u_i, u_i>)``, accumulated during the sweep.
    """
    return ensemble.costs, ensemble.coarse_costs


def _mean_se(x):
    n = x.size
    return float(x.mean()), (float(x.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0)


def _estimate(fine, coarse, exact=None) -> CostEstimate:
    mean, se = _mean_se(fine)
    if coarse is None:
        return CostEstimate(mean, se, fine.size, exact=exact)
    rich, rich_se = _mean_se(2.0 * fine - coarse)
    return CostEstimate(mean, se, fine.size, exact=exact, bias=abs(mean - float(coarse.mean())),
                        extrapolated=rich, extrapolated_stderr=rich_se)


def estimate_cost(sc: Scenario, policy: ControlPolicy, ensemble: PathEnsemble,
                  with_exact: bool = True) -> CostEstimate:
    """Sample mean and standard error of the cost over the ensemble."""
    fine, coarse = path_costs(sc, ensemble)
    exact = None
    if with_exact and policy.deterministic:
        exact = float(exact_cost_deterministic(sc, policy.u))
    return _estimate(fine, coarse, exact)


def coupled_costs(sc: Scenario, policy: ControlPolicy, strides=(1, 2, 4, 8),
                  n_paths: int | None = None, seed: int | None = None):
    """Per-path costs on nested grids driven by the same Brownian paths.

    Stride ``s`` steps over every ``s``-th node with summed increments.
    Returns an array of shape (len(strides), n_paths); differences between
    rows have far smaller variance than either row, which makes weak-order
    estimates affordable.
    """
    policy.check(sc)
    m = sc.grid.m
    for s in strides:
        if m % s:
            raise DimensionMismatch(f"stride {s} does not divide m = {m}")
    n_paths = sc.mc_paths if n_paths is None else int(n_paths)
    seed = sc.seed if seed is None else int(seed)
    x0 = np.asarray(sc.eta, dtype=float)
    F = _fused(sc)
    out = np.empty((len(strides), n_paths))
    for start in range(0, n_paths, CHUNK):
        stop = min(start + CHUNK, n_paths)
        dW = path_streams(seed, start, stop, m, sc.grid.dt)
        for r, s in enumerate(strides):
            _, run, _, _, _, term = _sweep(sc, policy, x0, dW, s, False, None, start, F)
            out[r, start:stop] = run + term
    return out


def observed_weak_order(costs) -> float:
    """Least-squares slope of ``log2 |mean(J_{2s} - J_s)|`` over the strides
    of :func:`coupled_costs` (strides doubling)."""
    d = np.abs(np.diff(costs, axis=0).mean(axis=1))
    slope = np.polyfit(np.arange(d.size), np.log2(d), 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# moment equations


def _moment_rhs(mu, S, u, A1, B, C, D, Q, R):
    Bu = u @ B.T
    Du = u @ D.T
    Cmu = mu @ C.T
    dmu = mu @ A1.T + Bu
    A1S = A1 @ S
    cross = Bu[:, :, None] * mu[:, None, :] + Cmu[:, :, None] * Du[:, None, :]
    dS = A1S + np.swapaxes(A1S, 1, 2) + cross + np.swapaxes(cross, 1, 2) \
        + C @ S @ C.T + Du[:, :, None] * Du[:, None, :]
    dc = np.einsum("ab,pba->p", Q, S) + np.einsum("pa,ab,pb->p", u, R, u)
    return dmu, dS, dc


def exact_cost_deterministic(sc: Scenario, u, eta=None):
    """Cost of a deterministic control from the mean/second-moment ODEs.

    ``u`` has shape (m, k) or (m+1, k) (one value per cell), or a batch
    (batch, m, k).  Returns a float, or an array for batched input.  The
    moment equations are integrated with Lawson RK4 (exact diagonal part).
    """
    if isinstance(u, ControlPolicy):
        if not u.deterministic:
            raise NonDeterministicPolicy("moment equations need an open-loop control")
        u = u.u
    u = np.asarray(u, dtype=float)
    m, n = sc.grid.m, sc.n
    single = u.ndim == 2
    if single:
        u = u[None]
    if u.ndim != 3 or u.shape[2] != sc.k or u.shape[1] not in (m, m + 1):
        raise DimensionMismatch(f"control shape {u.shape} incompatible with m={m}, k={sc.k}")
    nb = u.shape[0]
    x0 = np.asarray(sc.eta if eta is None else eta, dtype=float)
    mu = np.repeat(x0[None], nb, axis=0)
    S = np.repeat(np.outer(x0, x0)[None], nb, axis=0)
    cost = np.zeros(nb)
    c = sc.coeffs
    h = sc.grid.dt
    e1, e2 = np.exp(sc.lam * h), np.exp(sc.lam * 0.5 * h)

    def v1(E, v):
        return v * E

    def m1(E, M):
        return M * E[:, None] * E[None, :]

    for i in range(m):
        args = (u[:, i], c.A1[i], c.B[i], c.C[i], c.D[i], c.Q[i], c.R[i])
        a1, b1, c1 = _moment_rhs(mu, S, *args)
        a2, b2, c2 = _moment_rhs(v1(e2, mu + 0.5 * h * a1), m1(e2, S + 0.5 * h * b1), *args)
        a3, b3, c3 = _moment_rhs(v1(e2, mu) + 0.5 * h * a2, m1(e2, S) + 0.5 * h * b2, *args)
        a4, b4, c4 = _moment_rhs(v1(e1, mu) + h * v1(e2, a3), m1(e1, S) + h * m1(e2, b3), *args)
        mu = v1(e1, mu) + (h / 6) * (v1(e1, a1) + 2 * v1(e2, a2 + a3) + a4)
        S = m1(e1, S) + (h / 6) * (m1(e1, b1) + 2 * m1(e2, b2 + b3) + b4)
        S = 0.5 * (S + np.swapaxes(S, 1, 2))
        cost += (h / 6) * (c1 + 2 * (c2 + c3) + c4)
    if not np.all(np.isfinite(S)):
        raise NonFinite("moment equations overflowed")
    cost += np.einsum("ab,pba->p", c.G, S)
    return float(cost[0]) if single else cost


# ---------------------------------------------------------------------------
# verification of the value function


def stage_K(sol: RiccatiSolution) -> np.ndarray:
    """``K`` at the left node, midpoint and right node of every cell."""
    sc = sol.scenario
    P = sol.P.values
    cells = np.arange(sc.grid.m)
    dP = np.stack([riccati_rhs_nodes(sc, P[:-1], cells),
                   riccati_rhs_nodes(sc, P[1:], cells)], axis=1)
    K, _ = _stage_KL(sc, _stage_P(sc, P, dP))
    return K


def predicted_excess(sol: RiccatiSolution, v) -> float:
    """``int <K v, v> ds`` for a deterministic deviation ``v`` (per cell),
    by Simpson's rule on each cell."""
    sc = sol.scenario
    v = np.asarray(v, dtype=float)[: sc.grid.m]
    K = stage_K(sol)
    q = np.einsum("ia,isab,ib->is", v, K, v)
    return float(sc.grid.dt / 6 * (q[:, 0] + 4 * q[:, 1] + q[:, 2]).sum())


def random_block_control(rng, sc: Scenario, blocks: int = 4, scale: float = 0.5):
    """Piecewise-constant control with ``blocks`` random levels per component."""
    m = sc.grid.m
    levels = scale * rng.standard_normal((blocks, sc.k))
    idx = np.minimum((np.arange(m + 1) * blocks) // m, blocks - 1)
    return levels[idx]


@dataclass
class VerifyReport:
    value: float
    closed_loop: CostEstimate
    z_value: float
    perturbations: list = field(default_factory=list)
    margins: list = field(default_factory=list)

    @property
    def max_abs_z(self) -> float:
        zs = [abs(self.z_value)] + [abs(r["z"]) for r in self.perturbations]
        zs += [max(0.0, -r["z"]) for r in self.margins]
        return max(zs)

    @property
    def ok(self) -> bool:
        return self.max_abs_z <= Z_LIMIT

    def to_dict(self) -> dict:
        cl = self.closed_loop
        return {"schema": 1, "value": self.value, "mc_mean": cl.mean,
                "stderr": cl.stderr, "bias": cl.bias, "n_paths": cl.n_paths,
                "mc_extrapolated": cl.extrapolated,
                "extrapolated_stderr": cl.extrapolated_stderr,
                "z": self.z_value, "perturbations": self.perturbations,
                "margins": self.margins, "ok": self.ok}


def verify_value_function(sc: Scenario, sol: RiccatiSolution, n_paths: int | None = None,
                          n_perturb: int = 20, n_margin: int = 50, seed: int | None = None,
                          threads: int | None = None, scale: float = 0.5,
                          inject_bias: float = 0.0) -> VerifyReport:
    """Monte Carlo check of the value formula and the completion of squares.

    (a) closed-loop cost against ``<P(t0) eta, eta>``;
    (b) for deterministic deviations ``v``, ``J(Theta x + v) - <P eta, eta>``
        against ``int <K v, v>``;
    (c) for random deterministic and feedback deviations, the margin
        ``J(u) - J(Theta x)`` on common random numbers must not be
        significantly negative.

    Finite test families only sample the admissible controls, so (c) is a
    necessary-condition test.  ``inject_bias`` adds ``inject_bias * I`` to
    ``P(t0)`` (used to exercise the rejection path).
    """
    theta = feedback_from(sol)
    n_paths = sc.mc_paths if n_paths is None else n_paths
    seed = sc.seed if seed is None else seed
    P0 = sol.P.start + inject_bias * np.eye(sc.n)
    value = float(sc.eta @ P0 @ sc.eta)
    base_policy = Feedback(theta)
    cache = {} if n_paths * sc.grid.m <= NOISE_CACHE_LIMIT else None
    base = simulate(sc, base_policy, n_paths, seed, threads=threads, noise_cache=cache)
    base_fine, base_coarse = path_costs(sc, base)
    est = _estimate(base_fine, base_coarse)
    report = VerifyReport(value, est, est.z(value))

    rng = np.random.default_rng([seed, 1])
    for a in range(n_perturb):
        v = random_block_control(rng, sc, scale=scale)
        pol = FeedbackPlusOpenLoop(theta, v)
        ens = simulate(sc, pol, n_paths, seed, threads=threads, noise_cache=cache)
        fine, coarse = path_costs(sc, ens)
        e = _estimate(fine - value, None if coarse is None else coarse - value)
        pred = predicted_excess(sol, v)
        report.perturbations.append({
            "index": a, "kind": "open-loop", "excess": e.estimate, "stderr": e.scale,
            "bias": e.bias, "predicted": pred, "z": e.z(pred)})

    for a in range(n_margin):
        if a % 2 == 0:
            v = random_block_control(rng, sc, scale=scale)
            pol = FeedbackPlusOpenLoop(theta, v)
            kind = "open-loop"
        else:
            dth = scale * rng.standard_normal((sc.k, sc.n))
            pol = Feedback(FeedbackPath(sc.grid, theta.values + dth,
                                        stages=theta.stage_values() + dth))
            kind = "feedback"
        ens = simulate(sc, pol, n_paths, seed, threads=threads, noise_cache=cache)
        fine, coarse = path_costs(sc, ens)
        e = _estimate(fine - base_fine,
                      None if coarse is None else coarse - base_coarse)
        report.margins.append({"index": a, "kind": kind, "margin": e.estimate,
                               "stderr": e.scale, "bias": e.bias, "z": e.z(0.0)})
    return report


# ---------------------------------------------------------------------------
# CSV output


def _fmt(x):
    return format(float(x), ".17g")


def write_ensemble_csv(fh, sc: Scenario, ensemble: PathEnsemble):
    """Per-path terminal state and cost."""
    fine, _ = path_costs(sc, ensemble)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path"] + [f"x_T[{a}]" for a in range(sc.n)] + ["cost"])
    for p in range(ensemble.n_paths):
        w.writerow([p] + [_fmt(x) for x in ensemble.terminal[p]] + [_fmt(fine[p])])


def write_trajectories_csv(fh, ensemble: PathEnsemble):
    """Full state trajectories as (path, node, component, value) rows."""
    if ensemble.states is None:
        raise ValueError("ensemble was simulated without keep_paths")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path", "node", "component", "value"])
    N, m1, n = ensemble.states.shape
    for p in range(N):
        for i in range(m1):
            for a in range(n):
                w.writerow([p, i, a, _fmt(ensemble.states[p, i, a])])
