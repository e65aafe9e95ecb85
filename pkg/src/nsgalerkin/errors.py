"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid argument or parameter combination."""


class UndefinedFitError(ValueError):
    """Decay-order fit has no usable data (all-zero field)."""


class QuadratureError(RuntimeError):
    """Numerical quadrature did not meet its convergence gate."""


class TimeGridMismatch(ValueError):
    pass


class BlowUpError(RuntimeError):
    """Non-finite state or norm ceiling exceeded during time stepping."""

    def __init__(self, message, time, mode=None, last_snapshot=None, trajectory=None):
        super().__init__(message)
        self.time = time
        self.mode = mode
        self.last_snapshot = last_snapshot
        self.trajectory = trajectory


class ContractionFailure(RuntimeError):
    """Picard increments stopped contracting."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class ConfigError(ValueError):
    """Scenario configuration failed validation."""

    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
