"""Exception hierarchy shared across the package."""


class NonlocalLabError(Exception):
    """Base class for all package errors."""


class DomainError(NonlocalLabError, ValueError):
    """A parameter lies outside the mathematical domain of an operation."""


class PreconditionError(NonlocalLabError, ValueError):
    """An input violates a stated precondition (e.g. measure bounds)."""


class InfeasibleSectorError(DomainError):
    """The requested sector configuration admits no comparison constant."""


class KernelEvaluationError(NonlocalLabError, ArithmeticError):
    """A kernel returned a non-finite value."""


class ConfigurationError(NonlocalLabError, ValueError):
    """A grid/operator configuration cannot be discretised."""


class GeometryError(NonlocalLabError, ValueError):
    """A ball or cutoff is not resolved by, or not contained in, the grid."""


class UnsupportedRepresentationError(NonlocalLabError, TypeError):
    """The operator representation does not support the requested path."""


class ConvergenceError(NonlocalLabError, RuntimeError):
    """An iterative solve did not reach its tolerance.

    Parameters
    ----------
    message : str
    best_residual : float
        Smallest relative residual observed.
    iterations : int
    """

    def __init__(self, message, best_residual, iterations=0):
        super().__init__(message)
        self.best_residual = best_residual
        self.iterations = iterations


class IntegrityError(NonlocalLabError):
    """A stored baseline failed its checksum."""


class BaselineMismatchError(NonlocalLabError):
    """A baseline was requested for a report produced by a different config."""
