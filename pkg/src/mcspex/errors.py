"""Exception hierarchy shared across the package."""


class MCSpExError(Exception):
    """Base class for all package errors."""


class DimensionError(MCSpExError, ValueError):
    """Tensor shapes are inconsistent with an operation."""


class NumericError(MCSpExError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class ConfigError(MCSpExError, ValueError):
    """An architectural or training configuration is invalid."""


class FormatError(MCSpExError, ValueError):
    """An audio or manifest file is not in the expected format."""


class DegenerateInputError(MCSpExError, ValueError):
    """Input is valid in shape but degenerate (e.g. all-zero signal)."""


class InputTooShortError(DimensionError):
    """Waveform is shorter than the longest encoder filter."""


class UsageError(MCSpExError, ValueError):
    """An API was called with arguments outside its contract."""
