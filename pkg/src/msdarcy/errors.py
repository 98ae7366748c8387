"""Exception types shared across the solver."""


class ConfigError(Exception):
    """Invalid experiment configuration or input file."""


class RasterError(ConfigError):
    """Malformed raster file."""

    def __init__(self, message, path=None, line=None):
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class IncompatibleSourceError(ConfigError):
    """Source field violates the zero-boundary-flux compatibility condition."""

    def __init__(self, message, integral=None):
        super().__init__(message)
        self.integral = integral


class SolverError(Exception):
    """Base class for numerical failures."""


class SingularOperatorError(SolverError):
    """Operator is (effectively) singular; carries a null-direction witness when known."""

    def __init__(self, message, witness=None, nullity=None):
        super().__init__(message)
        self.witness = witness
        self.nullity = nullity


class ConvergenceError(SolverError):
    """An iterative solve failed to reach its residual target."""
