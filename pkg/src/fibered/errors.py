"""Exception hierarchy shared by all modules."""


class FiberedError(Exception):
    """Base class for library errors."""


class DimensionMismatchError(FiberedError, ValueError):
    pass


class DomainError(FiberedError, ValueError):
    pass


class SamplingError(FiberedError, ValueError):
    pass


class ModeError(FiberedError, ValueError):
    """Requested derivative mode is unavailable for the field."""


class DegenerateGradientError(FiberedError, ValueError):
    pass


class MaskedValueError(FiberedError, ValueError):
    """Access to a node outside the active mask."""


class InputError(FiberedError, ValueError):
    pass


class SignHypothesisError(FiberedError, ValueError):
    pass


class TruncationError(FiberedError, ValueError):
    """A radius or region extends past the grid box."""


class ConfigError(FiberedError, ValueError):
    def __init__(self, message, path="/"):
        super().__init__(f"{path}: {message}")
        self.path = path


class StepFailure(FiberedError, RuntimeError):
    """Line search could not decrease the merit function."""

    def __init__(self, message, last_iterate=None, log=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.log = log


class EigenSolverError(FiberedError, RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []
