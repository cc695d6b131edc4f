"""
Error taxonomy for the ccseg toolkit.

Contract and configuration failures derive from ValueError, I/O failures from
OSError, so callers outside the package can keep catching the builtin types.
"""


class CCSegError(Exception):
    """Root of every error raised by ccseg."""


class ContractViolation(CCSegError, ValueError):
    """A documented precondition of an operation was not met."""


class ConfigurationError(CCSegError, ValueError):
    """A configuration value cannot produce a valid computation."""


class DataIOError(CCSegError, OSError):
    """Reading or writing an artifact failed."""


class ManifestNotFoundError(DataIOError):
    """The manifest file does not exist."""


class MalformedRecordError(DataIOError):
    """A manifest record is missing fields or carries invalid values."""

    def __init__(self, frame_id: str, reason: str):
        self.frame_id = frame_id
        super().__init__(f"Malformed record for frame '{frame_id}': {reason}")


class DanglingPathError(DataIOError):
    """A manifest record points at a file that does not exist."""

    def __init__(self, frame_id: str, path: str):
        self.frame_id = frame_id
        self.path = path
        super().__init__(f"Frame '{frame_id}' references missing file: {path}")


class LabelMapError(DataIOError):
    """A label map PNG cannot be read or written under the annotation convention."""


class WeightsLoadError(DataIOError):
    """A weights file is corrupt or lacks a tensor the variant needs."""

    def __init__(self, message: str, tensor_name: str = None):
        self.tensor_name = tensor_name
        super().__init__(message)


class UnwritableOutputError(DataIOError):
    """An output directory cannot be created or written."""
