"""Observation records: detected objects and per-image scene data.

These are the in-memory counterparts of the manifest wire format and the
rows a reference database is built from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

from .errors import ValidationError
from .geometry import BoundingBox
from .matching import FeatureVector


@dataclass(frozen=True)
class ObjectInstance:
    """One detected object: pixel box, detection confidence, feature."""

    box: BoundingBox
    confidence: float
    feature: FeatureVector

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"object confidence must be in [0, 1], got {self.confidence!r}")


@dataclass(frozen=True)
class SceneRecord:
    """Everything observed in one image.

    ``selection_embedding`` is only consulted when choosing the per-room
    reference image; when absent the global feature stands in for it.
    """

    image_id: str
    room_id: str
    global_feature: FeatureVector
    objects: Tuple[ObjectInstance, ...] = ()
    keypoint_descriptors: Tuple[FeatureVector, ...] = ()
    selection_embedding: Optional[FeatureVector] = None

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be nonempty")
        if not self.room_id:
            raise ValidationError(f"room_id must be nonempty (image {self.image_id!r})")
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "keypoint_descriptors", tuple(self.keypoint_descriptors))
        dims = {o.feature.dim for o in self.objects}
        if len(dims) > 1:
            raise ValidationError(
                f"object features of image {self.image_id!r} have mixed dimensions {sorted(dims)}"
            )
        kdims = {k.dim for k in self.keypoint_descriptors}
        if len(kdims) > 1:
            raise ValidationError(
                f"keypoint descriptors of image {self.image_id!r} have mixed dimensions {sorted(kdims)}"
            )

    @property
    def object_feature_dim(self) -> int:
        return self.objects[0].feature.dim if self.objects else 0

    @property
    def keypoint_dim(self) -> int:
        return self.keypoint_descriptors[0].dim if self.keypoint_descriptors else 0

    def thresholded_objects(self, min_confidence: float) -> Tuple[ObjectInstance, ...]:
        """Objects that survive the detection-confidence floor."""
        return tuple(o for o in self.objects if o.confidence >= min_confidence)
