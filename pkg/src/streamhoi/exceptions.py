"""Error types shared across the package."""


class ConfigurationError(ValueError):
    """A run or model configuration is invalid (bad field value, unknown key)."""


class ShapeError(ValueError):
    """An array argument has the wrong rank or an inconsistent dimension."""


class InvalidStateError(RuntimeError):
    """An object was used in a way its current state does not allow."""


class NumericalError(RuntimeError):
    """A computation produced NaN/Inf or otherwise left the valid numeric range."""
