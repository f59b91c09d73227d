"""Exception hierarchy shared across the package.

The command-line layer maps these onto process exit codes: configuration,
input, and parse problems exit 2; numeric failures exit 3.
"""
from __future__ import annotations


class QtsadError(Exception):
    """Base class for package errors."""


class BudgetError(QtsadError):
    """Requested size exceeds the simulator budget."""


class ShapeError(QtsadError):
    """Vector or matrix dimensions do not agree."""


class ConfigError(QtsadError):
    """Invalid configuration value."""


class InputError(QtsadError):
    """Runtime input violates a precondition."""


class NumericError(QtsadError):
    """A quantity that must be finite is not."""


class UnsupportedError(QtsadError):
    """Operation requested outside its supported regime."""


class CsvParseError(QtsadError):
    """Malformed CSV content; carries the offending 1-based row when known."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class CheckpointError(QtsadError):
    """Unreadable, truncated, or version-incompatible checkpoint."""
