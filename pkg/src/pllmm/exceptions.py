"""Exception types raised by the pllmm package."""


class PllmmError(Exception):
    """Base class for all pllmm errors."""


class NumericalDomainError(PllmmError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class NonPositiveDefiniteError(PllmmError, ArithmeticError):
    """A per-group marginal covariance matrix failed its Cholesky factorization."""

    def __init__(self, group_label, message=None):
        self.group_label = group_label
        super().__init__(message or f"covariance matrix for group {group_label!r} is not positive definite")


class BelowThresholdError(PllmmError, ValueError):
    """A coefficient is below the hard-zero threshold; the caller must clamp it to zero."""


class UnboundedVarianceError(PllmmError, RuntimeError):
    """The bracket for a variance-component search expanded past its cap."""


class DegenerateDataError(PllmmError, ValueError):
    """The data admit no meaningful fit (all-zero response, no penalized columns, ...)."""


class GroupMismatchError(PllmmError, ValueError):
    """Evaluation data do not share the fitted model's groups."""

    def __init__(self, group_label, message=None):
        self.group_label = group_label
        super().__init__(message or f"group {group_label!r} does not match the fitted model")


class PathError(PllmmError, RuntimeError):
    """Every fit along a regularization path failed."""


class ScenarioError(PllmmError, RuntimeError):
    """Too many replicate failures inside a simulation scenario."""


class InternalConsistencyError(PllmmError, AssertionError):
    """An accepted solver step increased the objective; impossible by construction."""
