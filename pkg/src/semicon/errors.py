"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An operation received tensors whose shapes violate its contract."""


class ConfigError(ValueError):
    """A run configuration (file or flags) failed validation."""


class DataError(ValueError):
    """A dataset file is missing, truncated or malformed."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""
