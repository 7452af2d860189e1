"""Exception hierarchy shared by every kslab module."""


class KSLabError(Exception):
    """Base class for all errors raised by kslab."""


class ConfigurationError(KSLabError, ValueError):
    """Malformed descriptor or configuration; ``path`` names the offending field."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class PreconditionError(KSLabError, ValueError):
    pass


class CoefficientBoundsError(KSLabError):
    """A sampled coefficient left its declared [inf, sup] interval."""


class PositivityError(KSLabError, ArithmeticError):
    """A density field lost strict positivity (or a negative power hit a zero cell)."""


class SingularityError(KSLabError, ArithmeticError):
    """The chemotactic sensitivity chi/v was evaluated at v <= 0."""


class SolverError(KSLabError):
    """A linear solve failed to meet its residual contract."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class StiffnessError(KSLabError):
    """The stability-limited time step fell below ``dt_min``."""

    def __init__(self, message, dt_required=None):
        self.dt_required = dt_required
        super().__init__(message)
