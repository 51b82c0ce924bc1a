"""
Exception hierarchy for the navigation framework
"""
from typing import Optional


class NavigatorError(Exception):
    """Base class for every domain error raised by the package"""


class InvalidPoseError(NavigatorError, ValueError):
    """Pose is off the map or on an inaccessible cell"""


class NoPathError(NavigatorError):
    """No terminal pose is reachable from the start pose"""


class HouseGenerationError(NavigatorError, ValueError):
    """Generation parameters cannot produce a valid house"""


class DatasetFormatError(NavigatorError, ValueError):
    """A dataset file line could not be parsed"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ShapeMismatchError(NavigatorError, ValueError):
    """Array shapes are incompatible for the requested operation"""


class NonFiniteError(NavigatorError, ValueError):
    """NaN or Inf reached an operation boundary"""


class EmptyDatasetError(NavigatorError, ValueError):
    """An operation needs at least one sample or episode"""


class ReportMismatchError(NavigatorError, ValueError):
    """Metric reports were produced under different evaluation settings"""


class TraceMismatchError(NavigatorError, ValueError):
    """An episode trace cannot be replayed on the given map"""
