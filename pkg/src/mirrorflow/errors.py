"""Exception types shared across the package."""


class MirrorFlowError(Exception):
    """Base class for all package-specific errors."""


class DomainError(MirrorFlowError, ValueError):
    """A point violates the open domain of a potential or map.

    Carries the offending coordinate index when known.
    """

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class UnsupportedTemperatureError(MirrorFlowError, ValueError):
    """Temperature value for which the tempered family is not defined."""


class SingularConstraintError(MirrorFlowError, ValueError):
    """Constraint Jacobian is rank deficient at the evaluation point."""


class StepTooLargeError(MirrorFlowError, ValueError):
    """A discrete update left the domain of the potential."""


class NoConvergenceError(MirrorFlowError, RuntimeError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DomainExitError(MirrorFlowError, RuntimeError):
    """A continuous flow left the domain; reports time and coordinate."""

    def __init__(self, message, time=None, coordinate=None):
        super().__init__(message)
        self.time = time
        self.coordinate = coordinate


class NumericalError(MirrorFlowError, RuntimeError):
    """A non-finite value appeared where a finite one was required."""


class DegenerateInputError(MirrorFlowError, ValueError):
    """Input is degenerate (e.g. a zero vector where mass is required)."""


class GridMismatchError(MirrorFlowError, ValueError):
    """Two trajectories do not share the same time grid."""


class ConditionError(MirrorFlowError, ValueError):
    """A reparameterization pair failed its compatibility condition."""

    def __init__(self, message, max_residual=None):
        super().__init__(message)
        self.max_residual = max_residual
