"""Exception types shared across the package."""


class NanoodError(Exception):
    """Base class for every error raised by nanood."""


class InvalidParameter(NanoodError, ValueError):
    """An argument violates a documented precondition."""


class InvalidState(NanoodError, RuntimeError):
    """An object is used before the state it needs has been built."""


class NumericalFailure(NanoodError, ArithmeticError):
    """A computation produced a singular matrix or a non-finite value."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ParseError(NanoodError, ValueError):
    """Malformed input file; carries the offending location."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class ConfigError(NanoodError, ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, message, key_path=""):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path


class VerificationFailure(NanoodError, AssertionError):
    """A numerical identity or bound did not hold."""
