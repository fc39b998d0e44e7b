"""Exception hierarchy for FMD-analysis"""
from typing import Optional


class FmdError(Exception):
    """Base class for every error raised by the toolkit"""


class ArgumentError(FmdError, ValueError):
    """An argument violates an operation's precondition"""


class RangeError(ArgumentError):
    """A numeric argument is outside the supported range"""


class DegenerateRateError(ArgumentError):
    """A detection rate of exactly 0 or 1 where the formula needs 0 < p < 1"""


class CapacityError(FmdError):
    """The exact computation is too large; use the Monte-Carlo variant"""


class EmptyInputError(FmdError):
    """An input file contained no usable records"""


class ConfigError(FmdError):
    """Invalid configuration file or flag combination"""


class ParseError(FmdError):
    """Malformed line in an input file"""

    def __init__(self, message: str, line_number: Optional[int] = None, path: Optional[str] = None):
        self.line_number = line_number
        self.path = path
        location = ""
        if path is not None:
            location = f"{path}:"
        if line_number is not None:
            location = f"{location}{line_number}: "
        elif location:
            location = f"{location} "
        super().__init__(f"{location}{message}")
