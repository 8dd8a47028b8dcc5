"""Exception hierarchy shared across the package."""


class DimeError(Exception):
    """Base class for all package errors."""


class ConfigError(DimeError):
    """Invalid configuration value or unknown key."""


class ShapeError(DimeError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ImageReadError(DimeError, OSError):
    """The image file is missing or cannot be decoded."""


class UnsupportedFormatError(DimeError):
    """The file is not a PNG image."""


class ChannelCountError(DimeError):
    """The image does not have exactly three color channels."""


class CheckpointError(DimeError):
    """Base class for checkpoint (de)serialization failures."""


class CorruptHeaderError(CheckpointError):
    pass


class TruncatedDataError(CheckpointError):
    pass


class SchemaVersionError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    def __init__(self, keys):
        self.keys = sorted(keys)
        super().__init__("checkpoint config differs on keys: " + ", ".join(self.keys))


class NonFiniteGradientError(DimeError, FloatingPointError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"non-finite gradient in parameter {name!r}")


class NonFiniteLossError(DimeError, FloatingPointError):
    def __init__(self, iteration, batch_ids):
        self.iteration = iteration
        self.batch_ids = list(batch_ids)
        super().__init__(f"non-finite loss at iteration {iteration} (batch ids {self.batch_ids})")


class DatasetError(DimeError):
    """Dataset directory is empty, unmatched, or otherwise unusable."""
