"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: config/contract problems -> 2,
numeric failures -> 3, file/format problems -> 4.
"""


class GmatError(Exception):
    """Base class for all library errors."""


class ContractError(GmatError, ValueError):
    """A caller violated a documented precondition."""


class ConfigError(GmatError, ValueError):
    """An experiment configuration is invalid or inconsistent."""


class NumericError(GmatError, ArithmeticError):
    """A forward or backward pass produced non-finite values."""


class FormatError(GmatError, ValueError):
    """An input or checkpoint file does not match its format."""
