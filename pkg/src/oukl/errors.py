"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised for malformed or non-finite inputs."""


class SingularInputError(ValueError):
    """Raised when a formula is evaluated at one of its singular points."""


class DomainError(ValueError):
    """Raised when a point lies outside the region where a quantity is defined."""


class LemmaViolationError(RuntimeError):
    """Raised when a sampled inclusion fails even with a generous constant."""


class KalmanViolationError(ValueError):
    """Raised when the covariance of the process degenerates."""
