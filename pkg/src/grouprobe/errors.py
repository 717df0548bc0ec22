"""Exception types shared across the toolkit."""


class GrouprobeError(Exception):
    """Base class for all toolkit errors."""


class FileFormatError(GrouprobeError):
    """File does not conform to the expected on-disk format (bad magic, version, dtype)."""


class CorruptFileError(FileFormatError):
    """File header is sound but the payload is truncated or otherwise damaged."""


class SchemaError(GrouprobeError):
    """Tabular input is missing required columns or carries illegal values."""


class ValidationError(GrouprobeError):
    """Data violates a structural invariant (shape mismatch, non-finite values, ...)."""


class DegenerateInputError(ValidationError):
    """Numerically degenerate input, e.g. a zero-norm row where a direction is required."""


class IncompleteAnnotationError(ValidationError):
    """An operation needs an attribute label for every row but some are unknown."""
