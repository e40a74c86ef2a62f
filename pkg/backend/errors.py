# backend/errors.py

from typing import Optional


class FdesqError(Exception):
    """Base class for every error raised by the fdesq library."""


class DimensionError(FdesqError, ValueError):
    """Shapes of states, matrices or traces do not agree."""


class ParameterError(FdesqError, ValueError):
    """A numeric parameter lies outside its valid range."""


class InputError(FdesqError, ValueError):
    """Input collection is empty or too short for the requested operation."""


class DataError(FdesqError, ValueError):
    """Data violates a domain invariant (non-positive price, duplicate date)."""


class DegenerateRangeError(FdesqError, ValueError):
    """Min-max scaling requested on a constant series."""


class DegenerateInputError(FdesqError, ValueError):
    """Statistic requested on a constant series."""


class NumericalError(FdesqError, ArithmeticError):
    """Non-finite values appeared during an update."""


class RangeError(FdesqError, IndexError):
    """A window does not fit inside its series."""


class ConfigError(FdesqError, ValueError):
    """Run configuration could not be loaded or failed validation."""


class ParseError(FdesqError, ValueError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class IoError(FdesqError, OSError):
    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message}: {path}" if path else message)
