"""Typed errors raised at operation boundaries.

Each error also derives from the closest builtin exception, so callers that
only know about ``ValueError`` or ``IndexError`` keep working.
"""


class MaskintError(Exception):
    """Base class of every contract failure raised by maskint."""


class DimensionError(MaskintError, ValueError):
    """Tensor extents do not agree (e.g. matmul inner dimensions)."""


class GeometryError(MaskintError, ValueError):
    """Frame, grid or window geometry is inconsistent."""


class CapacityError(MaskintError, ValueError):
    """Not enough (distinct) patches to fit the requested codebook."""


class IncompleteGridError(MaskintError, ValueError):
    """A token grid with masked positions was passed where a full grid is needed."""


class ClipSpecError(MaskintError, ValueError):
    """A synthetic clip specification violates its invariants."""


class ContractError(MaskintError, ValueError):
    """A generic precondition of an operation is not met."""


class ScheduleDomainError(MaskintError, ValueError):
    """Mask-schedule argument outside [0, 1] or step index out of range."""


class SegmentationError(MaskintError, ValueError):
    """Long-video keyframes cannot be split into model-sized segments."""


class ConfigError(MaskintError, ValueError):
    """Unknown key or invalid value in a run configuration."""


class FormatError(MaskintError, ValueError):
    """A binary container has a bad magic, version or layout."""


class ChecksumError(MaskintError, ValueError):
    """A CRC32 check failed while loading a binary container."""


class TokenIndexError(MaskintError, IndexError):
    """A token index is outside the vocabulary."""


class TrainingDivergedError(MaskintError, RuntimeError):
    """Training produced a non-finite loss."""


class InternalInvariantError(MaskintError, RuntimeError):
    """An internal invariant was violated; this is a bug sentinel."""
