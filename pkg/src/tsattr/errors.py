"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class TsattrError(Exception):
    """Base class for all package errors."""


class ConfigError(TsattrError):
    """Invalid configuration value or inconsistent option combination."""


class DataError(TsattrError):
    """Invalid, missing or malformed data."""


class NumericError(TsattrError):
    """Numerically undefined or failed computation."""


class FormatError(DataError):
    """A container or manifest file does not parse."""


class DanglingReferenceError(DataError):
    """A manifest entry points at a raster file that does not exist."""


class InfeasibleSplitError(DataError):
    """Fewer fields than requested cross-validation folds."""


class EmptyFieldError(DataError):
    """An operation removed or found no usable pixels in a field."""


class WindowError(DataError):
    """A date falls outside the supported temporal sampling window."""


class SceneOverflowError(DataError):
    """More scenes than slots in the raw time series."""


class BandSchemaError(DataError):
    """A required band label is missing or unknown."""


class CoverageError(DataError):
    """Auxiliary records do not cover the required date range."""


class ShapeError(DataError):
    """Array dimensions do not match the model or method contract."""


class TrainingFailureError(NumericError):
    """Training diverged; carries the epoch at which the loss went non-finite."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training loss became non-finite at epoch {epoch}")


class IntractableError(ConfigError):
    """Problem size exceeds a hard enumeration limit."""


class UndefinedStatisticError(NumericError):
    """A statistic (variance, correlation, norm) is undefined on this input."""
