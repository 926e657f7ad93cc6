"""Exception hierarchy shared by all modules."""


class EpfError(Exception):
    """Base class for every error raised by epfkit."""


class ValidationError(EpfError, ValueError):
    """Input data violates a documented precondition."""


class ParseError(ValidationError):
    """A CSV row could not be parsed."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class GapError(ValidationError):
    """Hourly series has a hole longer than one hour."""


class ConfigError(ValidationError):
    """Inconsistent configuration or missing inputs."""


class HistoryError(ValidationError):
    """Not enough history before the requested day."""


class DegenerateScaleError(ValidationError):
    """A scale or denominator is zero."""


class DegenerateTestError(EpfError):
    """A test statistic is undefined for the supplied data.

    ``partial`` carries whatever could still be computed.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial or {}


class ConvergenceError(EpfError):
    """Iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, last_iterate=None, n_iter=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.n_iter = n_iter


class PipelineError(EpfError):
    """Wraps an error with the pipeline stage it came from."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
