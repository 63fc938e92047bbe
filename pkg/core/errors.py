# core/errors.py
"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class FerError(Exception):
    exit_code = 3


class UsageError(FerError):
    """Bad arguments or invalid configuration."""
    exit_code = 1


class DataError(FerError):
    """Unreadable or inconsistent input data."""
    exit_code = 2


class NumericError(FerError):
    """A numerical procedure failed."""
    exit_code = 3


class CascadeFormatError(DataError):
    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class ManifestError(DataError):
    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class ModelFormatError(DataError):
    pass


class LandmarkFailure(DataError):
    """A landmark detector found nothing usable; callers fall back."""


class AlignmentError(NumericError):
    pass


class ConvergenceError(NumericError):
    def __init__(self, message: str, violation: float):
        self.violation = violation
        super().__init__(f"{message} (final KKT violation {violation:.3e})")
