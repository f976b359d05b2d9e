"""Exception hierarchy.

Every error carries a class-level ``exit_code`` used by the command line
runner, so callers can map failures onto process exit statuses without a
lookup table.
"""


class WentzellError(Exception):
    exit_code = 1


class ConfigError(WentzellError, ValueError):
    exit_code = 2


class ParameterError(ConfigError):
    """An argument is outside its admissible range (T <= 0, eps <= 0, ...)."""


class DimensionError(WentzellError, ValueError):
    exit_code = 2


class CoefficientError(WentzellError, ValueError):
    exit_code = 2


class DataError(WentzellError, ValueError):
    exit_code = 2


class GeometryError(WentzellError, ValueError):
    exit_code = 3


class ResolutionError(GeometryError):
    pass


class SolverError(WentzellError, RuntimeError):
    exit_code = 4


class InstabilityError(SolverError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DegenerateObservationError(SolverError):
    pass


class ConsistencyError(SolverError):
    pass


class NonConvergenceError(WentzellError, RuntimeError):
    """Iteration budget exhausted.

    The best iterate seen so far and the residual history are attached so
    that callers can inspect or resume.
    """

    exit_code = 5

    def __init__(self, message, best=None, residual=None, history=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.history = history if history is not None else []


class FixedPointQualityError(NonConvergenceError):
    def __init__(self, message, linear_gap=None, nonlinear_gap=None, **kwargs):
        super().__init__(message, **kwargs)
        self.linear_gap = linear_gap
        self.nonlinear_gap = nonlinear_gap
