"""Closed-loop stochastic LQ control of spectrally truncated evolution equations.

Riccati synthesis by successive approximation, regularity and convexity
certificates, and Monte Carlo / moment-equation verification of the value
function.
"""
from .errors import (AsymmetryError, ConfigError, DimensionError, DimensionMismatch,
                     DNotSquare, DSingular, KNotInvertible, MaxIterExceeded,
                     MonotonicityViolation, NonDeterministicPolicy, NonFinite,
                     NotCertified, ParseError, SingularTransform, SLQError)
from .spectral import (CoefficientSet, PiecewiseConstant, Scenario, SpectralModel,
                       TimeGrid, load_scenario, make_scenario, project, project_scenario,
                       semigroup_apply)
from .lyapunov import FeedbackPath, MatrixPath, lyapunov_psd_check, solve_lyapunov
from .riccati import (PseudoInverse, RegularityCertificate, RiccatiSolution, certify,
                      feedback_from, pseudo_inverse, riccati_direct, riccati_iterate)
from .sde import (ControlPolicy, CostEstimate, Feedback, FeedbackPlusOpenLoop, OpenLoop,
                  PathEnsemble, coupled_costs, estimate_cost, exact_cost_deterministic,
                  observed_weak_order, simulate,
                  verify_value_function)
from .convexity import (ConvexityReport, assess, certify_via_riccati, check_as34, check_classical,
                        control_transform_conditioning, hessian_lambda_min)

__version__ = "0.1.0"
