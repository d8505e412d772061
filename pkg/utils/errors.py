"""
Exception types shared by the parsers, agents and command-line front door.
"""

from typing import Optional


class StallwatchError(Exception):
    """Base class for every error raised on purpose by this package"""


class DataError(StallwatchError):
    """An input file (or an in-memory stream built from one) is invalid"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class ConfigError(DataError):
    """Invalid engine configuration value or key"""


class OrderingError(DataError):
    """Frames were fed to the tracker out of order"""


class UsageError(StallwatchError):
    """Bad command line"""
