"""Shared exception types."""


class ParseError(ValueError):
    """Malformed input file; message carries the offending line number."""


class ValidationError(ValueError):
    """Structurally parseable input that violates a data invariant."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered during optimization."""
