"""Exception taxonomy shared across the package.

Three failure families map onto the CLI exit codes: bad API usage or bad
arguments (exit 1), broken data or configuration, and numerical failure
during training (both exit 2).
"""


class UsageError(ValueError):
    """Caller violated an operation's precondition (shapes, ranges, order)."""


class ConfigError(ValueError):
    """A configuration value is outside its supported domain."""


class DataError(ValueError):
    """Input data is internally inconsistent (e.g. illegal recorded action)."""


class NumericError(RuntimeError):
    """Training or evaluation produced a non-finite value."""
