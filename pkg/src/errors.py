"""Exception hierarchy for the fairness audit toolkit."""

from typing import Optional


class AuditError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(AuditError, ValueError):
    """Raised when an experiment config is malformed or invalid."""


class DataError(AuditError, ValueError):
    """Raised when input data violates a documented precondition."""


class SchemaError(DataError):
    """Raised when a CSV or table does not match its declared schema.

    Attributes:
        row: 1-based data row number, if the problem is tied to a row
        column: Column name, if the problem is tied to a column
    """

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        """Initialize a schema error.

        Args:
            message: Human-readable description
            row: 1-based data row number (header excluded)
            column: Offending column name
        """
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column


class UndefinedRateError(DataError):
    """Raised when a confusion rate has an empty denominator."""


class ZeroVarianceError(DataError):
    """Raised when paired differences have zero variance."""


class InfeasibleSpecError(DataError):
    """Raised when a planted-bias spec cannot be realized."""


class TrainingError(AuditError):
    """Raised when a classifier cannot be trained on the given data."""


class RunFailure(AuditError):
    """Raised when one seed of an experiment fails.

    Attributes:
        seed: The seed that failed
    """

    def __init__(self, seed: int, cause: Exception):
        """Wrap the failure of a single seed.

        Args:
            seed: The seed that failed
            cause: The underlying exception
        """
        super().__init__(f"seed {seed} failed: {cause}")
        self.seed = seed
        self.cause = cause

    def __reduce__(self):
        return RunFailure, (self.seed, self.cause)
