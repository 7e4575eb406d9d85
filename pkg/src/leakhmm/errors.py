"""Exception types raised across the package."""


class LeakHmmError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LeakHmmError, ValueError):
    """An argument violates an operation's precondition."""


class DimensionMismatchError(InvalidInputError):
    """Feature dimension does not match the model or mixture."""


class NoAdmissiblePathError(LeakHmmError):
    """No state path has nonzero probability under the model."""


class ParseError(InvalidInputError):
    """A text file could not be parsed.

    ``line`` is 1-based and refers to the physical line in ``path``.
    """

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class ConfigError(LeakHmmError):
    """A run configuration or scenario file is invalid."""
