"""
core_errors.py - exceptions raised by the library.

Library code raises; experiments/cli.py maps each class to a process exit code:
0 success, 1 claim failure, 2 usage or config error, 3 numeric failure.
"""

from typing import Optional


class DBGNNError(Exception):
    """Base class for all project errors."""

    exit_code = 1


class InvalidSizeError(DBGNNError, ValueError):
    """A size argument is out of range (invalid-size)."""

    exit_code = 2


class InvalidGraphError(DBGNNError, ValueError):
    """A graph violates the topology invariants."""

    exit_code = 2


class GraphFormatError(InvalidGraphError):
    """A graph text file could not be parsed."""


class DimensionMismatchError(DBGNNError, ValueError):
    """Array shapes do not agree with the graph or the weights."""

    exit_code = 2


class ConfigError(DBGNNError, ValueError):
    """An experiment config failed schema validation or could not be resolved."""

    exit_code = 2


class NumericFailureError(DBGNNError, ArithmeticError):
    """Non-finite values or a non-converging numerical routine."""

    exit_code = 3


class NumericOverflowError(NumericFailureError):
    """Non-finite values appeared during a rollout."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step
