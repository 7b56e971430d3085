"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration, shape mismatch, or unsupported format/version."""


class DataError(ValueError):
    """Unreadable, malformed, or inconsistent input data."""


class NumericError(ArithmeticError):
    """Non-finite loss or other numeric divergence."""
