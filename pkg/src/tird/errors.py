"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract, so new error conditions
should reuse one of the classes below rather than raising bare ValueError.
"""


class TirdError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(TirdError):
    """Operands have incompatible shapes (both shapes are named in the message)."""


class ConfigurationError(TirdError):
    """A configuration value is invalid or produces an impossible geometry."""


class UsageError(TirdError):
    """An API precondition was violated by the caller."""


class NumericError(TirdError):
    """NaN/Inf encountered where a finite value is required."""


class CheckpointFormatError(TirdError):
    """Checkpoint file has wrong magic bytes or an unsupported version."""


class CheckpointCorruptError(TirdError):
    """Checkpoint file is structurally damaged (truncated or inconsistent)."""


class TransferError(TirdError):
    """Cross-modal weight transfer found no usable source entries."""


class DatasetError(TirdError):
    """A dataset directory is missing files or malformed."""


class SceneSpecError(TirdError):
    """A synthetic scene specification is unsatisfiable (e.g. path exits frame)."""


class FileFormatError(TirdError):
    """An input file (point cloud, PGM, trace, config) failed to parse."""
