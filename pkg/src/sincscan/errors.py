"""Exception taxonomy shared across the package.

Every error raised on a documented failure path derives from SincscanError,
so callers (and the CLI exit-code mapping) can dispatch on a small, stable
set of classes instead of parsing messages.
"""


class SincscanError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(SincscanError, ValueError):
    """Operand shapes are incompatible; the message names both shapes."""


class ContractError(SincscanError, ValueError):
    """A documented precondition was violated (non-scalar loss, Delta <= 0, ...)."""


class NumericError(SincscanError, ArithmeticError):
    """A computation produced NaN / inf or an otherwise unusable value."""


class ConfigError(SincscanError, ValueError):
    """A configuration value or combination is invalid."""


class InputError(SincscanError, ValueError):
    """User-supplied data is unusable (too short, single-class score set, ...)."""


class FormatError(SincscanError, ValueError):
    """A binary file is not in the expected format (e.g. non-PCM16 WAV)."""


class ParseError(SincscanError, ValueError):
    """A text file failed to parse; the message includes the line number."""


class CheckpointError(SincscanError, ValueError):
    """A checkpoint file is missing fields or has an unknown version tag."""
