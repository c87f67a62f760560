"""Exception types shared across the package."""


class SaliencyBenchError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(SaliencyBenchError, ValueError):
    """Two arrays that must agree in shape do not."""


class LayerConfigError(SaliencyBenchError, ValueError):
    """A layer received an input incompatible with its configuration."""


class ParameterError(SaliencyBenchError, ValueError):
    """An operation was called with an invalid parameter value."""


class TrainingError(SaliencyBenchError, RuntimeError):
    """Training diverged or was given an unusable dataset."""


class GenerationError(SaliencyBenchError, RuntimeError):
    """Scene geometry could not be satisfied."""


class DecodeError(SaliencyBenchError, ValueError):
    """A serialized artifact could not be decoded."""


class BadMagicError(DecodeError):
    """File does not start with the expected magic string."""


class BadVersionError(DecodeError):
    """File carries an unsupported format version."""


class TruncatedFileError(DecodeError):
    """File ended before its declared payload was complete."""


class ConfigError(SaliencyBenchError, ValueError):
    """A run configuration is invalid (CLI exit code 2)."""


class StageError(SaliencyBenchError, RuntimeError):
    """A pipeline stage failed (CLI exit code 3)."""
