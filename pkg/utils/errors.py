"""
EPNet error hierarchy
Every error carries the exit code the command line reports for it
"""
from typing import Optional


class EPNetError(Exception):
    """Base class for all EPNet errors"""

    exit_code = 1


class UsageError(EPNetError):
    """Bad flags, missing inputs, or an API called in the wrong state"""

    exit_code = 2


class ConfigError(UsageError):
    """Invalid or unknown configuration values"""


class DimensionError(EPNetError, ValueError):
    """Tensor shapes that do not fit the operation"""

    exit_code = 3


class TensorIndexError(EPNetError, IndexError):
    """Index (e.g. a channel split boundary) out of range"""

    exit_code = 3


class ParseError(EPNetError):
    """Malformed image file"""

    exit_code = 3

    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        location = f"{path}: " if path else ""
        super().__init__(f"{location}{message} (byte offset {offset})")
        self.offset = offset
        self.path = path


class LoadError(EPNetError):
    """Checkpoint does not match the expected parameter set"""

    exit_code = 3


class NumericError(EPNetError):
    """Non-finite values during optimization"""

    exit_code = 4
