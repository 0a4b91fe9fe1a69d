"""Exception hierarchy shared by every ``slq`` module."""


class SLQError(Exception):
    """Base class for all errors raised by the package."""


class ParseError(SLQError):
    """Scenario file could not be parsed."""


class DimensionMismatch(SLQError):
    """Sizes of scenario members are inconsistent."""


class DimensionError(DimensionMismatch):
    """Requested basis or projection size is not admissible."""


class AsymmetryError(SLQError):
    """A matrix that must be symmetric is not, beyond tolerance."""


class ConfigError(SLQError):
    """Invalid study or command configuration."""


class NonFinite(SLQError):
    """Overflow or NaN during integration or simulation.

    ``node`` is the grid index where the failure was detected and ``path``
    the Monte Carlo path index, when applicable.
    """

    def __init__(self, message, node=None, path=None):
        super().__init__(message)
        self.node = node
        self.path = path


class KNotInvertible(SLQError):
    """``K_j = R + D'P_jD`` failed the positivity test during iteration.

    Carries the witness: iteration index ``j``, grid ``node`` and the
    offending smallest eigenvalue ``kmin``.
    """

    def __init__(self, j, node, kmin):
        super().__init__(
            f"K not invertible at iteration {j}, node {node}: "
            f"lambda_min(K) = {kmin:.6g}"
        )
        self.j = j
        self.node = node
        self.kmin = kmin


class MaxIterExceeded(SLQError):
    """Successive approximation did not reach the tolerance."""

    def __init__(self, iterations, last_delta):
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(last sup-norm update {last_delta:.3e})"
        )
        self.iterations = iterations
        self.last_delta = last_delta


class MonotonicityViolation(SLQError):
    """Iterates failed ``P_j >= P_{j+1}``; usually a too-coarse grid."""

    def __init__(self, j, node, eig):
        super().__init__(
            f"monotonicity violated between iterates {j} and {j + 1} "
            f"at node {node}: lambda_min(P_j - P_j+1) = {eig:.3e}"
        )
        self.j = j
        self.node = node
        self.eig = eig


class NotCertified(SLQError):
    """A feedback was requested from an uncertified Riccati solution."""


class NonDeterministicPolicy(SLQError):
    """Moment equations need a deterministic open-loop control."""


class DNotSquare(SLQError):
    """The invertibility test on ``D`` needs a square matrix."""


class DSingular(SLQError):
    """``D(s)`` is numerically singular at some node."""

    def __init__(self, node, smin):
        super().__init__(f"D singular at node {node} (sigma_min = {smin:.3e})")
        self.node = node
        self.smin = smin


class SingularTransform(SLQError):
    """The discrete control transform could not be inverted."""
