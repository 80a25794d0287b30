"""Exception types raised across the pipeline.

Each stage raises a distinct class so callers (and the CLI) can attribute
failures to the stage that produced them instead of pattern-matching
messages.
"""


class EnsvisError(Exception):
    """Base class for all errors raised by this package."""


class MalformedCorpusError(EnsvisError):
    """A dataset batch file does not decompose into whole records."""


class CorruptRecordError(EnsvisError):
    """A dataset record carries an out-of-range label byte."""


class InsufficientResolutionError(EnsvisError):
    """Image too small for the requested number of scale-space octaves."""


class NumericalFailureError(EnsvisError):
    """A numeric routine produced non-finite values."""


class EmptySampleError(EnsvisError):
    """An encoder was handed a descriptor set with no rows."""


class DegenerateLabelsError(EnsvisError):
    """A binary training set contains only one class."""


class DimensionError(EnsvisError, ValueError):
    """Operand dimensions do not match the model or each other."""


class FormatError(EnsvisError):
    """A serialized blob has a bad magic value or unsupported version."""


class TruncationError(EnsvisError):
    """A serialized blob's length disagrees with its header arithmetic."""


class CorruptIndexError(EnsvisError):
    """A feature file's row-id index is not strictly increasing."""


class RegistryError(EnsvisError):
    """A feature stream references a missing or inconsistent registry entry."""


class ConsistencyError(EnsvisError):
    """Feature dimensions drifted between the train and test splits."""


class IncompleteInputError(EnsvisError):
    """Prediction was attempted without features for every member stream."""


class DegenerateEnsembleError(EnsvisError):
    """A vote was requested from an ensemble with no members."""


class PipelineError(EnsvisError):
    """Wraps a stage failure with the name of the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
