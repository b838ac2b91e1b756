"""Exception types raised across the package."""


class CghError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(CghError):
    """Tensor shapes violate an operation's contract."""


class ArgumentError(CghError):
    """An argument value is outside its allowed range."""


class StateError(CghError):
    """Operations called out of order, e.g. backward before forward."""


class NumericError(CghError):
    """Non-finite values appeared where finite values are required."""


class IngestError(CghError):
    """Malformed input data; message carries the offending row number."""


class CheckpointError(CghError):
    """Unreadable, truncated, or version-incompatible checkpoint file."""


class ConfigError(CghError):
    """Invalid run configuration; message names the offending key."""
