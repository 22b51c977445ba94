"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class ContractError(RuntimeError):
    """An operation was called in a state its contract forbids."""


class NumericError(ArithmeticError):
    """A non-finite value reached a numeric routine."""


class FormatError(ValueError):
    """A checkpoint or results file is malformed."""


class ConfigError(ValueError):
    """Bad config file or flag value."""
