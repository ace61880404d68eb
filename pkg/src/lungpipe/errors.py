"""Exception hierarchy shared by all pipeline stages."""


class LungPipeError(Exception):
    """Base class for every error raised by this package."""


class FormatError(LungPipeError):
    """Volume header is malformed or declares unsupported data."""


class CorruptData(LungPipeError):
    """Raw payload disagrees with the declared volume geometry."""


class ConfigError(LungPipeError):
    """Invalid parameter combination supplied by the caller."""


class ResampleError(LungPipeError):
    """Resampling would produce a degenerate (empty-axis) volume."""


class OutOfBounds(LungPipeError):
    """Requested cube center lies too far outside the volume."""


class NoLungFound(LungPipeError):
    """Lung segmentation found no internal air component."""


class VolumeTooSmall(LungPipeError):
    """Volume is too small for the largest requested blur scale."""


class ParseError(LungPipeError):
    """Annotation document could not be parsed."""


class ValidationError(LungPipeError):
    """Annotation values violate the schema (e.g. malignancy outside 1..5)."""


class StratificationWarning(UserWarning):
    """A class cannot be stratified because all its nodules share a subject."""


class ArchError(LungPipeError):
    """Architecture spec and tensor shapes are incompatible."""


class DataError(LungPipeError):
    """Training dataset violates a precondition (e.g. single class)."""


class DivergenceError(LungPipeError):
    """Training loss became non-finite."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class IntegrationError(LungPipeError):
    """Malignancy model and integration mode are inconsistent."""


class FoldError(LungPipeError):
    """A cross-validation fold is missing a class entirely."""


class NoNodulesDetected(LungPipeError):
    """Patient has no candidate nodules to aggregate."""


class EmptyEvaluation(LungPipeError):
    """Evaluation was called with no samples."""


class SpecError(LungPipeError):
    """Phantom specification violates its own invariants."""
