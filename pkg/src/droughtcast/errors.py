"""Exception hierarchy shared by every droughtcast module.

The CLI maps these onto process exit codes, so new error types should
subclass one of the three broad families below (config / data / numeric)
rather than raising bare exceptions.
"""


class DroughtcastError(Exception):
    """Base class for all library errors."""


class ConfigError(DroughtcastError):
    """Invalid configuration value or combination."""


class ShapeError(DroughtcastError):
    """Tensor shapes incompatible with the requested operation."""


class NumericError(DroughtcastError):
    """NaN/Inf encountered, or a numerically undefined request."""


class DataError(DroughtcastError):
    """Input data violates a contract (gaps, duplicates, missing fields)."""


class SchemaError(DataError):
    """An input file is missing required columns or is malformed."""


class FormatError(DataError):
    """A binary artifact (checkpoint, cache) failed magic/structure checks."""


class EmptySequenceError(DataError):
    """A sequence operation received zero time steps."""


class UndefinedMetricError(DataError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class DegenerateTestError(DataError):
    """A statistical test has zero variance in its inputs."""


class IoError(DroughtcastError):
    """Filesystem write failure for an output artifact."""
