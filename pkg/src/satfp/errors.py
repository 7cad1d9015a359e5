"""Exception hierarchy shared across the toolkit."""


class SatfpError(Exception):
    """Base class for all errors raised by this package."""


class MalformedInputError(SatfpError, ValueError):
    """Input violates a structural precondition (odd bit count, length mismatch, ...)."""


class DegenerateInputError(SatfpError, ValueError):
    """Input is degenerate (e.g. an all-zero waveform cannot be normalized)."""


class UndecodableError(SatfpError):
    """Header correlation fell below the decode floor; message discarded."""

    def __init__(self, correlation: float, floor: float):
        self.correlation = correlation
        self.floor = floor
        super().__init__(
            f"header correlation {correlation:.4f} below decode floor {floor:.4f}"
        )


class ConfigurationError(SatfpError, ValueError):
    """A configuration value or combination is invalid for the requested run."""


class FormatError(SatfpError):
    """A file does not carry the expected magic/version."""


class CorruptionError(SatfpError):
    """A record file is truncated or inconsistent; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class ShapeError(SatfpError, ValueError):
    """Array shape does not match the model/operation contract."""


class DegenerateEmbeddingError(SatfpError, ValueError):
    """An embedding has (numerically) zero norm and cannot be compared."""


class BatchStructureError(SatfpError, ValueError):
    """A batch does not satisfy the 8-transmitters-by-4-messages structure."""


class TrainingFailureError(SatfpError):
    """Training diverged (non-finite loss); carries the epoch index."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")


class CheckpointFormatError(SatfpError):
    """Checkpoint container is corrupt or has the wrong magic."""


class UnsupportedVersionError(CheckpointFormatError):
    """Checkpoint/file version is newer than this build supports."""
