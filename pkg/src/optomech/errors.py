"""Exception types shared across the package."""


class OptomechError(Exception):
    """Base class for all package-specific errors."""


class SpaceMismatchError(OptomechError):
    """Operands live on different composite spaces."""


class SpaceShapeError(OptomechError):
    """Space does not have the subsystem layout an operation requires."""


class WrongKindError(OptomechError):
    """State has the wrong kind (vector vs density matrix) for an operation."""


class NumericValidityError(OptomechError):
    """A numerical validity check failed (hermiticity, positivity, norm)."""


class ModelRegimeError(OptomechError):
    """Parameters violate the regime a model builder requires."""


class TruncationTooSmallError(OptomechError):
    """Requested state does not fit in the Fock truncation within tolerance."""


class IntegratorAccuracyError(OptomechError):
    """Integration accuracy contract (norm/trace drift) was violated."""


class ConvergenceError(OptomechError):
    """Steady-state search did not converge within the configured horizon."""

    def __init__(self, message, residual_trace=None):
        super().__init__(message)
        self.residual_trace = residual_trace


class ConfigError(OptomechError):
    """Scenario configuration is invalid."""

    def __init__(self, message, path=None):
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path
