"""Exception types shared across the package.

The CLI maps these onto exit codes: config/usage problems exit 1, data and
file-format problems exit 2, verification failures exit 3.
"""


class LgestError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(LgestError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DimensionError(LgestError, ValueError):
    """Tensor shapes violate an operation's contract."""


class NumericError(LgestError, ArithmeticError):
    """A numeric invariant broke: non-finite values where finite ones are required."""


class StateError(LgestError, RuntimeError):
    """Operation requires state that has not been established yet."""


class FormatError(LgestError, ValueError):
    """A binary file does not match its declared layout."""


class DataError(LgestError, ValueError):
    """Input data violates a documented precondition."""
