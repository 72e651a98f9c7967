"""Exception hierarchy shared across the engine.

The CLI maps these onto exit codes: usage problems exit 2, data/format
problems exit 3, internal invariant violations exit 4.
"""

from __future__ import annotations


class RoomReidError(Exception):
    """Base class for all engine errors."""


class UsageError(RoomReidError):
    """Caller passed arguments that violate a documented precondition."""


class ValidationError(RoomReidError):
    """Input data violates a documented invariant (bad manifest content,
    zero vectors, inconsistent record shapes, ...)."""


class DimensionMismatchError(ValidationError):
    """Two vectors or vector sets with incompatible dimensions."""

    def __init__(self, dim_a: int, dim_b: int, context: str = ""):
        self.dim_a = dim_a
        self.dim_b = dim_b
        where = f" in {context}" if context else ""
        super().__init__(f"dimension mismatch{where}: {dim_a} vs {dim_b}")


class DataFormatError(RoomReidError):
    """On-disk artifact cannot be decoded."""


class VersionMismatchError(DataFormatError):
    """File declares a format version this build does not understand."""


class TruncatedFileError(DataFormatError):
    """File ended before its declared payload was complete."""


class ChecksumError(DataFormatError):
    """Stored checksum does not match the file contents."""


class ProviderError(RoomReidError):
    """A pluggable provider failed; carries the pipeline stage and image id."""

    def __init__(self, stage: str, image_id: str, cause: BaseException):
        self.stage = stage
        self.image_id = image_id
        super().__init__(f"provider failed at stage {stage!r} for image {image_id!r}: {cause}")


class InvariantViolation(RoomReidError):
    """The engine itself reached a state its contracts forbid (a bug)."""
