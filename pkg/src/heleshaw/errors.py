"""Exception hierarchy shared by all solver modules."""


class HeleShawError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(HeleShawError, ValueError):
    pass


class InvalidDatum(HeleShawError, ValueError):
    """Initial datum violates a precondition (sign, mass)."""


class DegenerateDatum(InvalidDatum):
    """Inverse distribution produced coincident particle positions."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InvalidState(HeleShawError, ValueError):
    """Position vector is not strictly monotone or has wrong endpoints."""


class InvalidDensity(HeleShawError, ValueError):
    pass


class StepFailure(HeleShawError, RuntimeError):
    """Implicit step could not be solved within the substep budget."""

    def __init__(self, message, residual=float("nan"), step=None, time=None):
        super().__init__(message)
        self.residual = residual
        self.step = step
        self.time = time


class NumericalFailure(StepFailure):
    """A non-finite value appeared during a solve."""


class FdStepFailure(StepFailure):
    """Newton iteration of the finite-difference reference diverged."""


class NoConvergence(HeleShawError, RuntimeError):
    pass


class InsufficientData(HeleShawError, ValueError):
    pass


class ConfigError(HeleShawError, ValueError):
    pass
