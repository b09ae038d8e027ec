"""Exception types, mapped onto CLI exit codes (2 config, 3 numeric, 4 I/O)."""


class ConfigurationError(ValueError):
    """Invalid configuration, geometry, or violated precondition."""


class NumericError(RuntimeError):
    """Non-finite values encountered during evaluation or training."""

    def __init__(self, message: str, *, stage: str | None = None, step: int | None = None):
        if stage is not None:
            message = f"[{stage}] {message}"
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.stage = stage
        self.step = step


class CheckpointError(IOError):
    """Base class for checkpoint file problems."""


class CheckpointVersionError(CheckpointError):
    """Magic header or format version does not match."""


class CheckpointManifestError(CheckpointError):
    """Manifest is malformed or inconsistent with the payload."""


class CheckpointTruncatedError(CheckpointError):
    """Payload is shorter than the manifest promises."""
