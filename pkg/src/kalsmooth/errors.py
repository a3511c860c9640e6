"""Exception hierarchy shared by all solvers."""


class KalsmoothError(Exception):
    """Base class; ``category`` is the machine-readable tag used by the CLI."""

    category = "solver"


class ShapeMismatch(KalsmoothError, ValueError):
    category = "shape"


class InvalidParameter(KalsmoothError, ValueError):
    category = "parameter"


class NotPositiveDefinite(KalsmoothError, ArithmeticError):
    """Cholesky factorization failed.

    ``block`` is the zero-based time index of the offending block, or None
    when the failure is not tied to a single block.
    """

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class LineSearchFailed(KalsmoothError):
    pass


class MaxIterReached(KalsmoothError):
    """Iteration budget exhausted; ``residual`` holds the last KKT residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class Infeasible(KalsmoothError):
    pass


class SubproblemInfeasible(Infeasible):
    pass


class Unbounded(KalsmoothError):
    pass


class NotInCatalog(KalsmoothError, ValueError):
    pass


class AllMeasurementsRemoved(KalsmoothError):
    pass


class ConfigError(KalsmoothError):
    category = "config"
