"""
Exception hierarchy.

Every error carries the process exit code the command line reports for it:
1 runtime/data, 2 configuration/usage, 3 validity rejection.
"""

from typing import Any, List, Optional, Sequence


class Layout4DError(Exception):
    """Base class for all library errors."""

    exit_code: int = 1
    http_status: int = 500


class DataError(Layout4DError):
    """Malformed or unusable input data."""

    exit_code = 1
    http_status = 400

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class ConfigError(Layout4DError):
    """Invalid configuration, arguments or schema."""

    exit_code = 2
    http_status = 400


class SchemaError(ConfigError):
    """JSON document does not match its schema."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer


class ValidityError(Layout4DError):
    """A layout or edit failed validity checking."""

    exit_code = 3
    http_status = 422

    def __init__(self, message: str, violations: Sequence[Any] = ()):
        super().__init__(message)
        self.violations: List[Any] = list(violations)


class InvalidGeometryError(DataError, ValueError):
    """Geometric invariant violated (non-orthonormal rotation, bad dims, ...)."""


class EmptyInputError(DataError):
    """An operation that needs points or mass received none."""


class InsufficientSamplesError(DataError):
    """Too few samples for a statistic."""


class DimensionMismatchError(DataError):
    """Operands have incompatible dimensions."""


class TooFewFramesError(ConfigError):
    """Sequence is shorter than the requested frame interval."""


class RegistrationError(DataError):
    """Rigid registration failed."""


class DegenerateConfigurationError(RegistrationError):
    """Point configuration does not determine a rigid transform."""


class NoCorrespondenceError(RegistrationError):
    """No point pairs inside the correspondence gate."""
