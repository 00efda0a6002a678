"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FracoptError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(FracoptError):
    """An argument is outside the domain an operation supports."""


class DimensionError(FracoptError):
    """Inconsistent dimensions or mismatched grids."""


class ConvergenceError(FracoptError):
    """A series or fixed-point iteration failed to converge."""


class SolverError(FracoptError):
    """A time-stepping solver produced an unusable state."""


class ExpressionError(FracoptError):
    """Base class for expression parsing/evaluation failures."""


class ExpressionSyntaxError(ExpressionError):
    """Parse failure; ``offset`` is the byte offset into the source."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ExpressionDomainError(ExpressionError):
    """Evaluation hit an invalid operand; carries the offending subexpression."""

    def __init__(self, message: str, subexpression: str):
        super().__init__(f"{message} in '{subexpression}'")
        self.subexpression = subexpression


class ConfigError(FracoptError):
    """A problem configuration document is malformed or inconsistent."""
