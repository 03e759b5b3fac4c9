"""Exception hierarchy shared by every goyld module."""


class GoyldError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GoyldError, ValueError):
    """Inconsistent shapes, grids or parameters."""


class DomainError(GoyldError, ValueError):
    """An argument lies outside the domain of the operation."""


class PreconditionError(GoyldError, ValueError):
    """A documented precondition (e.g. a noise-size regime) does not hold."""


class BlowUpError(GoyldError, ArithmeticError):
    """The integrator produced a non-finite state.

    Attributes
    ----------
    step : int
        Index of the step whose output was non-finite.
    partial : object
        The trajectory recorded up to (excluding) the failing step, if any.
    """

    def __init__(self, step, partial=None, message=None):
        self.step = step
        self.partial = partial
        super().__init__(message or f"non-finite state at step {step}")
