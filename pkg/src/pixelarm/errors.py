"""Exception types shared across the package."""


class PixelArmError(Exception):
    """Base class for all package errors."""


class DimensionError(PixelArmError, ValueError):
    """Array shapes incompatible with the requested operation."""


class ConfigError(PixelArmError, ValueError):
    """Invalid or inconsistent configuration."""


class StateError(PixelArmError, RuntimeError):
    """Operation invoked without required prior state (e.g. missing cache)."""


class DataError(PixelArmError, ValueError):
    """Dataset empty or otherwise unusable."""


class FormatError(PixelArmError, ValueError):
    """Corrupt or mismatched on-disk artifact."""


class NumericError(PixelArmError, ArithmeticError):
    """Non-finite values encountered during inference or training."""
