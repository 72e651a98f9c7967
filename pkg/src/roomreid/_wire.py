"""Low-level binary encoding shared by the manifest and database formats.

Numeric payloads are little-endian 32-bit floats, strings are
length-prefixed UTF-8, and whole files carry CRC32 checksums so torn or
corrupted writes surface as loader errors rather than silent bad data.
"""

from __future__ import annotations

import struct
import zlib
from typing import List, Optional, Tuple

import numpy as np

from .errors import ChecksumError, TruncatedFileError, ValidationError
from .geometry import BoundingBox
from .matching import FeatureVector
from .records import ObjectInstance, SceneRecord


class Reader:
    """Cursor over a byte buffer with hard errors on short reads."""

    def __init__(self, data: bytes, label: str):
        self._data = data
        self._label = label
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self._data):
            raise TruncatedFileError(
                f"{self._label}: needed {n} bytes at offset {self.pos}, "
                f"only {len(self._data) - self.pos} remain"
            )
        out = self._data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f32(self) -> float:
        return float(struct.unpack("<f", self.take(4))[0])

    def string(self) -> str:
        n = self.u32()
        return self.take(n).decode("utf-8")

    def f32_block(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)

    def done(self) -> bool:
        return self.pos == len(self._data)


class Writer:
    """Accumulates the same primitives the Reader consumes."""

    def __init__(self):
        self._parts: List[bytes] = []

    def raw(self, b: bytes) -> None:
        self._parts.append(b)

    def u8(self, v: int) -> None:
        self._parts.append(struct.pack("<B", v))

    def u32(self, v: int) -> None:
        self._parts.append(struct.pack("<I", v))

    def u64(self, v: int) -> None:
        self._parts.append(struct.pack("<Q", v))

    def f32(self, v: float) -> None:
        self._parts.append(struct.pack("<f", v))

    def string(self, s: str) -> None:
        b = s.encode("utf-8")
        self.u32(len(b))
        self.raw(b)

    def f32_block(self, values: np.ndarray) -> None:
        self._parts.append(np.asarray(values, dtype="<f4").tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


def append_crc(payload: bytes) -> bytes:
    """Payload plus a little-endian CRC32 trailer."""
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def split_crc(data: bytes, label: str) -> bytes:
    """Verify and strip a CRC32 trailer."""
    if len(data) < 4:
        raise TruncatedFileError(f"{label}: too short to carry a checksum trailer")
    payload, trailer = data[:-4], data[-4:]
    expect = struct.unpack("<I", trailer)[0]
    actual = zlib.crc32(payload) & 0xFFFFFFFF
    if expect != actual:
        raise ChecksumError(f"{label}: checksum mismatch (stored {expect:#010x}, computed {actual:#010x})")
    return payload


def encode_record(w: Writer, record: SceneRecord) -> None:
    """Record blob: ids, global feature, optional selection embedding,
    objects, keypoint descriptors.  Self-describing dimensions."""
    w.string(record.image_id)
    w.string(record.room_id)
    w.u32(record.global_feature.dim)
    w.f32_block(record.global_feature.values)
    if record.selection_embedding is not None:
        w.u8(1)
        w.u32(record.selection_embedding.dim)
        w.f32_block(record.selection_embedding.values)
    else:
        w.u8(0)
    w.u32(len(record.objects))
    for obj in record.objects:
        w.f32(obj.box.x)
        w.f32(obj.box.y)
        w.f32(obj.box.w)
        w.f32(obj.box.h)
        w.f32(obj.confidence)
        w.u32(obj.feature.dim)
        w.f32_block(obj.feature.values)
    w.u32(len(record.keypoint_descriptors))
    for kp in record.keypoint_descriptors:
        w.u32(kp.dim)
        w.f32_block(kp.values)


def decode_record(r: Reader) -> SceneRecord:
    image_id = r.string()
    room_id = r.string()
    gdim = r.u32()
    global_feature = FeatureVector(r.f32_block(gdim))
    selection: Optional[FeatureVector] = None
    if r.u8():
        sdim = r.u32()
        selection = FeatureVector(r.f32_block(sdim))
    n_obj = r.u32()
    objects = []
    for _ in range(n_obj):
        x, y, w_, h = r.f32(), r.f32(), r.f32(), r.f32()
        conf = r.f32()
        odim = r.u32()
        feat = FeatureVector(r.f32_block(odim))
        objects.append(ObjectInstance(BoundingBox(x, y, w_, h), conf, feat))
    n_kp = r.u32()
    keypoints = []
    for _ in range(n_kp):
        kdim = r.u32()
        keypoints.append(FeatureVector(r.f32_block(kdim)))
    return SceneRecord(
        image_id=image_id,
        room_id=room_id,
        global_feature=global_feature,
        objects=tuple(objects),
        keypoint_descriptors=tuple(keypoints),
        selection_embedding=selection,
    )


def require_nonzero(vec: FeatureVector, what: str) -> None:
    if vec.norm == 0.0:
        raise ValidationError(f"{what} is a zero vector; cosine similarity would be undefined")
