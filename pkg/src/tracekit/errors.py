class TracekitError(Exception):
    """Base class for all tracekit errors."""


class ParameterError(TracekitError, ValueError):
    """Invalid parameters or mismatched shapes."""


class FormatError(TracekitError):
    """Malformed binary or text file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SecretMissingError(FormatError):
    """A code file whose secret bias vector was stripped."""


class ConvergenceError(TracekitError):
    """An estimator could not make progress."""
