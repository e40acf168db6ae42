"""Exception taxonomy shared by every module."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A computation produced or encountered non-finite / unfactorizable values."""


class DatasetFormatError(InvalidInputError):
    """A dataset file failed to parse; carries the 1-based offending line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CheckpointError(InvalidInputError):
    """A checkpoint file is unreadable, truncated, or version-incompatible."""
