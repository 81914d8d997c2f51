"""Exception hierarchy for the stbf toolkit.

Every error raised on purpose by this package derives from StbfError, so
callers can catch one type at the CLI boundary and map it to an exit code.
"""


class StbfError(Exception):
    """Base class for all toolkit errors."""


class FormatError(StbfError):
    """Malformed container or serialized data (WAV header, manifest, STBF)."""


class UnsupportedCodecError(FormatError):
    """Audio encoding outside the supported set (PCM16, IEEE float32)."""


class EmptyAudioError(FormatError):
    """Audio file with a zero-length data payload."""


class ParameterError(StbfError):
    """Operation argument outside its documented range."""


class ConfigError(StbfError):
    """Configuration value violating a documented constraint."""


class NumericInputError(StbfError):
    """Non-finite values in numeric input."""


class NumericError(StbfError):
    """Non-finite values produced during computation."""


class DecompositionError(StbfError):
    """Iterative decomposition failed to converge within its cap."""


class ShapeError(StbfError):
    """Tensor dimensions inconsistent with the model or operation."""


class DataError(StbfError):
    """Dataset-level inconsistency (unknown speaker, missing embedding)."""


class TrainingDataError(DataError):
    """Training set degenerate (e.g. fewer than two classes for a head)."""
