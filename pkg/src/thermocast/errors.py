"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A layer or model was configured with invalid sizes or options."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class DataError(ValueError):
    """Input data is malformed, too short, or otherwise unusable."""


class NumericError(ArithmeticError):
    """Training produced non-finite values."""
