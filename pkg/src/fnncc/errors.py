"""Exception hierarchy shared across the package."""


class FnnccError(Exception):
    """Base class for all package errors."""

    code = 1


class ConfigurationError(FnnccError, ValueError):
    code = 2


class IllPosedFitError(FnnccError, ValueError):
    code = 3


class DegenerateDataError(FnnccError, ValueError):
    code = 4


class DataError(FnnccError, ValueError):
    code = 5


class RankError(FnnccError, ValueError):
    code = 6


class NumericError(FnnccError, FloatingPointError):
    code = 7


class TrainingDivergedError(FnnccError, RuntimeError):
    """Raised when validation loss becomes non-finite; carries the history so far."""

    code = 8

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class CalibrationError(FnnccError, ValueError):
    code = 9


class SchemaError(FnnccError, ValueError):
    code = 10


class DocumentParseError(FnnccError, ValueError):
    code = 11

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class VersionMismatchError(FnnccError, ValueError):
    code = 12


class InputFileError(FnnccError, OSError):
    code = 13
