"""Exception hierarchy.

Every error carries an ``exit_code`` (what ``cli_main`` returns when it
escapes a subcommand) and a human-readable ``detail``.
"""

from typing import Optional


class OracleTestbedError(Exception):
    """Base class for all testbed errors."""

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class UsageError(OracleTestbedError):
    """Bad command-line input or unreadable configuration."""

    exit_code = 2


class InvalidParameterError(UsageError, ValueError):
    """A parameter lies outside its documented domain."""


class InvalidQueryError(OracleTestbedError, ValueError):
    """Oracle query with an out-of-range index or a wrong-length point."""


class DegenerateInstanceError(OracleTestbedError):
    """F(0) equals F*, so the suboptimality ratio is undefined."""


class IllegalEvaluationError(OracleTestbedError):
    """Partial-frame evaluation at a point outside the determined span."""


class FrameExtensionError(OracleTestbedError):
    """No unit vector orthogonal to the protected set could be drawn."""


class NumericMinimizationError(OracleTestbedError):
    """Numeric minimizer stopped above the gradient-norm tolerance."""


class BudgetExceededError(OracleTestbedError):
    """Exhaustive enumeration or materialization beyond the configured caps."""


class InvariantViolation(OracleTestbedError):
    """A certified property failed on a concrete run."""

    exit_code = 1
