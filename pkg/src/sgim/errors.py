"""Error taxonomy shared by every module."""


class SgimError(Exception):
    """Base class for everything this package raises on purpose."""


class DimensionError(SgimError, ValueError):
    """Array shapes do not line up for the requested operation."""


class ParameterError(SgimError, ValueError):
    """A hyperparameter or argument is outside its allowed range."""


class DegenerateInputError(SgimError, ValueError):
    """Input is numerically degenerate (zero-norm row, non-finite entry)."""


class UsageError(SgimError, ValueError):
    """The operation was called in a way its contract forbids."""


class ConfigError(SgimError, ValueError):
    """Config file or override contains unknown or malformed keys."""


class NumericsError(SgimError, ArithmeticError):
    """An iterative procedure produced NaN/Inf and aborted."""
