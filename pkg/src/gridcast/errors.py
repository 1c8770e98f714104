"""Exception types shared across the toolkit.

Every raised error is a subclass of GridcastError so callers (and the CLI)
can catch toolkit failures without swallowing genuine bugs.
"""


class GridcastError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(GridcastError, ValueError):
    """Array dimensions incompatible with the requested operation."""


class DomainError(GridcastError, ValueError):
    """Scalar argument outside the mathematical domain of a function."""


class ParameterError(GridcastError, ValueError):
    """Configuration value outside its allowed range."""


class SchemaError(GridcastError, ValueError):
    """Missing, duplicate, or mismatched column in a tabular input."""


class CsvFormatError(GridcastError, ValueError):
    """Malformed CSV content; carries the offending line and column."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)


class EmptyJoinError(GridcastError, ValueError):
    """Aggregation or merge produced no overlapping (date, region) keys."""


class DegenerateInputError(GridcastError, ValueError):
    """Input carries no usable variation (constant values, zero distance)."""


class UndefinedMetricError(GridcastError, ValueError):
    """Metric is mathematically undefined on the given data."""


class DivergenceError(GridcastError, RuntimeError):
    """Training loss became NaN or infinite."""

    def __init__(self, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"loss diverged at epoch {epoch}, batch {batch}")


class CacheConsistencyError(GridcastError, ValueError):
    """Backward pass received caches that do not match the model or batch."""


class CheckpointIntegrityError(GridcastError, ValueError):
    """Checkpoint file is corrupt or truncated (checksum mismatch)."""


class CheckpointVersionError(GridcastError, ValueError):
    """Checkpoint was written by an incompatible format version."""


class WindowError(GridcastError, ValueError):
    """Not enough contiguous history to build the requested window."""


class StageError(GridcastError, RuntimeError):
    """Pipeline stage failure; names the stage for the CLI exit message."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
