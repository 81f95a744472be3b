class CpinferError(Exception):
    """Base class for errors raised by cpinfer."""


class ValidationError(CpinferError, ValueError):
    """Malformed input: shapes, ranges, non-finite values."""


class DomainError(CpinferError, ValueError):
    """Argument outside the domain of an operation."""


class IngestionError(ValidationError):
    """A data file could not be parsed into a numeric panel."""
