"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: DataError -> 1 (IO/schema),
ConfigError -> 2, NumericError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


class DataError(RuntimeError):
    """Missing, unreadable, or schema-inconsistent data files."""


class NumericError(ArithmeticError):
    """Numerical failure: non-finite gradients, failed factorizations, NaN loss."""
