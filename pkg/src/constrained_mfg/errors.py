"""Exception types shared across the solver modules."""


class ConstrainedMFGError(Exception):
    """Base class for solver errors."""


class TubeExceeded(ConstrainedMFGError):
    """A point lies farther from the domain than the boundary tube radius."""


class NonConvergence(ConstrainedMFGError):
    """An iterative routine stopped before reaching its tolerance.

    ``residual`` holds the last residual, ``trace`` the residual history and
    ``result`` an optional partial result so callers can still report it.
    """

    def __init__(self, message, residual=float("nan"), trace=None, result=None):
        super().__init__(message)
        self.residual = residual
        self.trace = list(trace) if trace is not None else []
        self.result = result


# both spellings appear in callers
NoConvergence = NonConvergence


class GridMismatch(ConstrainedMFGError):
    """Two grid objects that must coincide do not."""


class IncompatibleResolution(ConstrainedMFGError):
    """Time step and spacing leave no admissible moves in the stencil."""


class BoundaryNode(ConstrainedMFGError):
    """Interior-only operation requested at a boundary node."""


class CornerNode(ConstrainedMFGError):
    """Boundary operation requested at a box corner."""


class ConstraintQualificationFailed(ConstrainedMFGError):
    """The global minimiser of L(., 0) lies outside the closed domain."""


class RegimeViolation(ConstrainedMFGError):
    """A sample falls outside the bounded/Lipschitz regime of a check."""


class ConfigError(ConstrainedMFGError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
