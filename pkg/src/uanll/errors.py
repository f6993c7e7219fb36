"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class FormatError(ValueError):
    """A binary or text artifact does not conform to its file format."""


class InvalidStateError(RuntimeError):
    """An operation was called with stale or mismatched cached state."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss; carries the epoch and batch."""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value
