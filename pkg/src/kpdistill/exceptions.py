"""Exception hierarchy shared by every module."""


class KpDistillError(Exception):
    """Base class for all package errors."""


class ConfigurationError(KpDistillError, ValueError):
    """Invalid configuration value.

    ``field`` names the offending key when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None and field not in message:
            message = f"{field}: {message}"
        super().__init__(message)


class EmptyInputError(KpDistillError, ValueError):
    pass


class ShapeError(KpDistillError, ValueError):
    pass


class BatchTooSmallError(KpDistillError, ValueError):
    pass


class InvalidWorldError(KpDistillError, ValueError):
    pass


class DegenerateDataError(KpDistillError, ValueError):
    pass


class NumericOverflowError(KpDistillError, FloatingPointError):
    """A non-finite value appeared; ``path`` names where."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(message if path is None else f"{message} [{path}]")


class TooLargeError(KpDistillError, ValueError):
    pass


class EmptyIndexError(KpDistillError, ValueError):
    pass


class StaleIndexError(KpDistillError, RuntimeError):
    pass


class UntrainedModelError(KpDistillError, RuntimeError):
    pass


class MissingArtifactError(KpDistillError, FileNotFoundError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing upstream artifact: {self.path}")
