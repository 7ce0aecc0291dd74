"""
Exception hierarchy for the pad app.

Every error raised on purpose by the library derives from PadError. The
``exit_code`` attribute is what the command-line surface returns when the
error escapes a management command: 1 for invalid input, 2 for failures
while running.
"""

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class PadError(Exception):
    exit_code = EXIT_RUNTIME


class ValidationFailure(PadError):
    exit_code = EXIT_VALIDATION


# Numeric substrate

class DimensionError(PadError):
    pass


class ContractError(PadError):
    pass


class NonFiniteGradientError(PadError):
    def __init__(self, parameter, message=None):
        self.parameter = parameter
        super().__init__(message or f"Non-finite gradient for parameter '{parameter}'")


# Network description and checkpoints

class SpecError(ValidationFailure):
    pass


class CheckpointError(PadError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class FeatureExportError(PadError):
    pass


# Data

class ManifestError(ValidationFailure):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingColumnError(ManifestError):
    pass


class UnknownLabelError(ManifestError):
    pass


class EmptyManifestError(ManifestError):
    pass


class DuplicateSampleError(ManifestError):
    pass


class ImageFormatError(PadError):
    pass


class CorruptImageError(PadError):
    pass


class ProtocolError(ValidationFailure):
    pass


# Harness

class ConfigError(ValidationFailure):
    pass


class MetricsError(PadError):
    pass
