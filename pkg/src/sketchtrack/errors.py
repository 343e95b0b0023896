"""Exception hierarchy shared across the package.

The CLI maps each family onto its own exit code, so new errors should
subclass one of the three families below rather than ``SketchTrackError``
directly.
"""


class SketchTrackError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SketchTrackError, ValueError):
    """Invalid parameters, dimensions or configuration values."""


class DimensionError(ConfigError):
    pass


class OracleSizeError(ConfigError):
    """An oracle quantity was requested for a problem above the size cap."""


class IOFailure(SketchTrackError, OSError):
    """Any failure reading or writing an input/output file."""


class MatrixNotFoundError(IOFailure, FileNotFoundError):
    pass


class MalformedHeaderError(IOFailure):
    pass


class MatrixDimensionError(IOFailure):
    """The body of a MatrixMarket file disagrees with its size line."""


class NumericalError(SketchTrackError, ArithmeticError):
    """A non-finite value appeared during an iteration."""
