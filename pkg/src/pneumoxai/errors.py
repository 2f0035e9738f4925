"""Exception hierarchy shared across the package."""


class PneumoXaiError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(PneumoXaiError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(PneumoXaiError, FloatingPointError):
    """A NaN or infinity was fed into a numeric operation."""


class UnsupportedImageFormat(PneumoXaiError, ValueError):
    """Image bytes are in a format the pipeline does not accept."""


class DatasetError(PneumoXaiError, ValueError):
    """Dataset tree or manifest is malformed."""


class DecodeError(PneumoXaiError, ValueError):
    """Image bytes could not be decoded."""


class CheckpointError(PneumoXaiError, ValueError):
    """Checkpoint file is corrupt, truncated, or incompatible."""


class ConfigError(PneumoXaiError, ValueError):
    """Invalid configuration value."""


class MetricError(PneumoXaiError, ValueError):
    """Metric preconditions violated (empty input, single class, ...)."""
