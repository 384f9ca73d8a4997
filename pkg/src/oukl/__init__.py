"""Numerical verification toolkit for Kolmogorov and Ornstein-Uhlenbeck operators
with antisymmetric drift."""

from .errors import (
    DomainError,
    InvalidInputError,
    KalmanViolationError,
    LemmaViolationError,
    SingularInputError,
)
from .group_core import (
    DriftModel,
    GroupPoint,
    Propagator,
    compose,
    expm,
    gamma,
    in_paraboloid,
    inverse,
    paraboloid_threshold,
    phi_p,
    propagator,
)
from .ou_stochastic import (
    OUModel,
    classify,
    gramian,
    hitting_probability,
    hr_classify,
    integral_test,
    kalman_rank,
    sample_paths,
    transition_density,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "DriftModel",
    "GroupPoint",
    "InvalidInputError",
    "KalmanViolationError",
    "LemmaViolationError",
    "OUModel",
    "Propagator",
    "SingularInputError",
    "classify",
    "compose",
    "expm",
    "gamma",
    "gramian",
    "hitting_probability",
    "hr_classify",
    "in_paraboloid",
    "integral_test",
    "inverse",
    "kalman_rank",
    "paraboloid_threshold",
    "phi_p",
    "propagator",
    "sample_paths",
    "transition_density",
]
