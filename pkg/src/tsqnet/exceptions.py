"""Exception hierarchy shared across the package."""


class TsqError(Exception):
    """Base class for all library errors."""


class ConfigError(TsqError, ValueError):
    """Invalid configuration value or inconsistent combination of options."""


class DimensionError(TsqError, ValueError):
    """Array shapes do not agree with the declared dimensions."""


class FormatError(TsqError, ValueError):
    """On-disk artifact is malformed or inconsistent with its manifest."""


class InitializationError(TsqError, RuntimeError):
    """A parameter initializer could not be computed from the given data."""


class NumericError(TsqError, ArithmeticError):
    """A computation produced non-finite values or diverged."""
