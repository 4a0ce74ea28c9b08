"""Feature-norm OOD detection on small MLPs: hidden classifiers, NAN and baselines."""

from .errors import (
    ConfigError,
    InvalidParameter,
    InvalidState,
    NanoodError,
    NumericalFailure,
    ParseError,
    VerificationFailure,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "InvalidParameter",
    "InvalidState",
    "NanoodError",
    "NumericalFailure",
    "ParseError",
    "VerificationFailure",
    "__version__",
]
