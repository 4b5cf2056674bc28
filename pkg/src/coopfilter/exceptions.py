"""Exception hierarchy shared across the package."""


class CoopFilterError(Exception):
    """Base class for all package errors."""


class DimensionError(CoopFilterError, ValueError):
    """Matrix or vector shapes are mutually inconsistent."""


class NumericalError(CoopFilterError, ArithmeticError):
    """A numerical routine failed (factorization, convergence)."""


class FactorizationError(NumericalError):
    """A matrix expected to be positive definite could not be factorized."""


class ConvergenceError(NumericalError):
    """An iteration hit its cap before meeting its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StreamHorizonError(CoopFilterError, IndexError):
    """Attempted to read an observation that is not yet revealed."""


class InsufficientHistoryError(CoopFilterError, ValueError):
    """Not enough observations to build a regressor or fit a window."""


class ModelFreeOnlyError(CoopFilterError, ValueError):
    """A model-based computation was requested on data without a model."""
