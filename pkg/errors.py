# errors.py
"""Exceptions raised by the library, each carrying the CLI exit code it maps to."""


class MotionCodeError(Exception):
    """Base class for every error the pipeline raises on purpose"""

    exit_code = 3


class InvalidArgumentError(MotionCodeError, ValueError):
    exit_code = 2


class ConfigError(InvalidArgumentError):
    exit_code = 2


class ShapeMismatchError(MotionCodeError, ValueError):
    pass


class OutOfRangeError(MotionCodeError, ValueError):
    """Scene depth left the database range during the exposure"""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class HypothesisOutOfRangeError(MotionCodeError, ValueError):
    pass


class CorruptDatabaseError(MotionCodeError):
    pass


class SliceIndexError(MotionCodeError, IndexError):
    pass


class NoSignalError(MotionCodeError):
    pass


class AmbiguousScheduleError(MotionCodeError):
    pass


class DegenerateGeometryError(MotionCodeError):
    exit_code = 4
