"""Exception hierarchy shared by every module."""


class EmofusionError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(EmofusionError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ConfigError(EmofusionError, ValueError):
    """A hyperparameter or model configuration is invalid."""


class UsageError(EmofusionError, RuntimeError):
    """An API was called in the wrong order or with missing state."""


class DataError(EmofusionError, ValueError):
    """Input data is missing, empty or malformed."""


class FitError(EmofusionError, ValueError):
    """Parameters cannot be estimated from the given counts."""


class TrainingDivergedError(EmofusionError, FloatingPointError):
    """The training loss became non-finite."""

    def __init__(self, iteration, loss):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


class NoFacesError(EmofusionError):
    """No face is available to aggregate."""


class EmptyFaceError(EmofusionError):
    """A face box is empty once clamped to the image bounds."""


class IntegrityError(EmofusionError):
    """A model file failed its checksum or is truncated."""


class VersionError(EmofusionError):
    """A model file was written with an unsupported format version."""
