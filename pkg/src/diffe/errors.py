"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so every failure raised by library code
should be one of these (or an ``OSError`` for plain I/O trouble).
"""


class DiffEError(Exception):
    """Base class for all package errors."""


class DimensionError(DiffEError, ValueError):
    """Tensor shapes do not fit together."""


class NumericError(DiffEError, ArithmeticError):
    """A NaN or Inf showed up where finite values are required."""


class ConfigError(DiffEError, ValueError):
    """Invalid configuration value."""


class DataError(DiffEError, ValueError):
    """Dataset content violates an operation's preconditions."""


class FormatError(DiffEError, ValueError):
    """A file on disk is not a valid container."""
