"""Exception taxonomy shared across the package."""


class ParameterError(ValueError):
    """A physical or numerical parameter is outside its admissible range."""


class ShapeMismatchError(ValueError):
    """Field shapes or grids do not match the operator they were passed to."""


class GeometryError(RuntimeError):
    """The discrete fluid region is unusable (empty or disconnected)."""


class ResolutionError(ValueError):
    """A feature (usually a particle) is covered by too few grid cells."""


class ExtrapolationError(ValueError):
    """Not enough data points to perform the requested extrapolation or fit."""


class ConfigError(ValueError):
    """A run configuration failed schema or range validation."""


class SolverConvergenceError(RuntimeError):
    """An iterative solve did not reach its tolerances.

    Carries the residual history so callers can report or post-mortem it.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []
