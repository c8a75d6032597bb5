"""Exception types raised across the calibration package."""


class CalibrationError(Exception):
    """Base class for all package errors."""


class InvalidRotationError(CalibrationError, ValueError):
    pass


class NormalizationError(CalibrationError, ValueError):
    pass


class DomainError(CalibrationError, ValueError):
    pass


class OutOfWindowError(CalibrationError, ValueError):
    pass


class IllConditionedWindowError(CalibrationError, ValueError):
    pass


class InsufficientDataError(CalibrationError, ValueError):
    pass


class UnderConstrainedError(CalibrationError, RuntimeError):
    pass


class CoverageError(CalibrationError, RuntimeError):
    pass


class FormatError(CalibrationError, ValueError):
    """Malformed input file. ``line`` is 1-based, or None for whole-file problems."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
