from __future__ import annotations

import numpy as np
import pytest

from roomreid.geometry import BoundingBox
from roomreid.matching import FeatureVector
from roomreid.records import ObjectInstance, SceneRecord


def fv(*values) -> FeatureVector:
    return FeatureVector(np.asarray(values, dtype=np.float64))


def make_object(x, y, w, h, confidence=1.0, feature=(1.0, 0.0)) -> ObjectInstance:
    return ObjectInstance(
        box=BoundingBox(x, y, w, h), confidence=confidence, feature=fv(*feature)
    )


def make_record(
    image_id="img0",
    room_id="roomA",
    global_feature=(1.0, 0.0, 0.0),
    objects=(),
    keypoints=(),
    selection=None,
) -> SceneRecord:
    return SceneRecord(
        image_id=image_id,
        room_id=room_id,
        global_feature=fv(*global_feature),
        objects=tuple(objects),
        keypoint_descriptors=tuple(fv(*k) for k in keypoints),
        selection_embedding=fv(*selection) if selection is not None else None,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
