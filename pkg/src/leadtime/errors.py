"""Exception types shared across the package."""


class LeadtimeError(Exception):
    """Base class for all errors raised by this package."""


class DataError(LeadtimeError):
    """Input data violates a documented contract (bad values, bad shapes of records)."""


class ParseError(DataError):
    """A file could not be parsed; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyLogError(DataError):
    """An operation that requires a non-empty event log received an empty one."""


class ConfigError(LeadtimeError):
    """A configuration object is internally inconsistent."""


class StateError(LeadtimeError):
    """An object was used before reaching the required state (e.g. unfitted encoder)."""


class ShapeError(LeadtimeError):
    """Tensor dimensions are inconsistent with the parameters they are used with."""


class GradientGuardError(LeadtimeError):
    """Backward was invoked twice without zeroing gradients in between."""


class DivergenceError(LeadtimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}" + (f": {detail}" if detail else ""))


class TooSmallDatasetError(DataError):
    """Fewer cases than the split protocol can partition."""


class MetricError(LeadtimeError):
    """A metric is undefined for the given inputs."""


class CheckpointError(LeadtimeError):
    """Base class for model checkpoint problems."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint file is unreadable or structurally invalid."""


class ArchitectureMismatchError(CheckpointError):
    """Checkpoint architecture does not match the requested configuration."""
