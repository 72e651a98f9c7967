"""Reference database: per-room reference selection, patch precomputation
and the persisted index consumed at query time.

The index file layout is header-first: magic ``RRDB``, format version, the
scoring-config snapshot the build used, feature dimensions, room count,
per-room section offsets and a whole-file CRC32 (stored in the header over
the file with the checksum field zeroed), followed by one section per room
holding the chosen reference record and its precomputed patch features.
Identical inputs always produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import _wire, geometry
from .errors import (
    ChecksumError,
    DataFormatError,
    TruncatedFileError,
    UsageError,
    ValidationError,
    VersionMismatchError,
)
from .matching import FeatureVector
from .providers import PatchFeatureProvider, composite_patch_features
from .records import SceneRecord
from .scoring import ScoringConfig

FORMAT_VERSION = 1
_MAGIC = b"RRDB"


@dataclass(frozen=True)
class ReferenceDatabase:
    """One reference record per room plus precomputed patch features.

    Immutable once built; safe to share across concurrent query workers.
    """

    refs: Dict[str, SceneRecord]
    patch_features: Dict[str, Tuple[FeatureVector, ...]]
    build_config: ScoringConfig
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if set(self.refs) != set(self.patch_features):
            raise ValidationError("room sets of refs and patch_features differ")
        for room, record in self.refs.items():
            if record.room_id != room:
                raise ValidationError(
                    f"reference for room {room!r} carries room_id {record.room_id!r}"
                )

    @property
    def room_order(self) -> Tuple[str, ...]:
        """Rooms in sorted id order; stage-1 candidate indices follow it."""
        return tuple(sorted(self.refs))

    def __len__(self) -> int:
        return len(self.refs)

    def reference_objects(self, room_id: str) -> Tuple:
        """Reference-side objects surviving the build-time confidence floor."""
        return self.refs[room_id].thresholded_objects(self.build_config.object_conf_threshold)


def select_reference(candidates: Sequence[SceneRecord]) -> str:
    """Pick the room's most representative image.

    Clustering every candidate's selection embedding with a single cluster
    reduces to the arithmetic centroid, so the winner is simply the image
    whose embedding is nearest to the mean; ties fall to the smallest
    image_id.  Records without a selection embedding fall back to their
    global feature.
    """
    if not candidates:
        raise UsageError("select_reference over an empty candidate list")
    embeddings = []
    for r in candidates:
        vec = r.selection_embedding if r.selection_embedding is not None else r.global_feature
        embeddings.append(vec.values)
    dims = {e.size for e in embeddings}
    if len(dims) != 1:
        raise ValidationError(f"selection embeddings have mixed dimensions {sorted(dims)}")
    stack = np.stack(embeddings)
    centroid = stack.mean(axis=0)
    dists = np.linalg.norm(stack - centroid, axis=1)
    best = min(range(len(candidates)), key=lambda i: (dists[i], candidates[i].image_id))
    return candidates[best].image_id


def reference_patches(record: SceneRecord, cfg: ScoringConfig) -> List[geometry.PatchBox]:
    """Receptive-field patch boxes for one record under a config.

    Drops objects below the confidence threshold, takes box centers, builds
    Delaunay adjacency, expands each box over its neighbors and suppresses
    overlapping patches.
    """
    objects = record.thresholded_objects(cfg.object_conf_threshold)
    boxes = [o.box for o in objects]
    centers = [geometry.center(b) for b in boxes]
    adj = geometry.delaunay_adjacency(centers)
    patches = geometry.expand_receptive_field(boxes, adj, [o.confidence for o in objects])
    return geometry.nms(patches, cfg.nms_iou)


def build_database(
    records: Sequence[SceneRecord],
    cfg: ScoringConfig,
    patch_feature_provider: Optional[PatchFeatureProvider] = None,
) -> ReferenceDatabase:
    """Build the per-room reference index from a pool of records.

    Selects one reference per room, precomputes its receptive-field patch
    features through the provider, and returns the immutable database.
    A reference left with zero objects after thresholding simply gets empty
    patch features.
    """
    if not records:
        raise UsageError("cannot build a database from zero records")
    provider = patch_feature_provider or composite_patch_features

    seen_ids: Dict[str, str] = {}
    by_room: Dict[str, List[SceneRecord]] = {}
    for r in records:
        if r.image_id in seen_ids:
            raise ValidationError(
                f"duplicate image_id {r.image_id!r} across rooms "
                f"{seen_ids[r.image_id]!r} and {r.room_id!r}"
            )
        seen_ids[r.image_id] = r.room_id
        by_room.setdefault(r.room_id, []).append(r)

    refs: Dict[str, SceneRecord] = {}
    patch_features: Dict[str, Tuple[FeatureVector, ...]] = {}
    for room_id in sorted(by_room):
        candidates = by_room[room_id]
        chosen_id = select_reference(candidates)
        record = next(r for r in candidates if r.image_id == chosen_id)
        patches = reference_patches(record, cfg)
        feats = provider(record, patches) if patches else []
        patch_features[room_id] = tuple(feats)
        refs[room_id] = record

    return ReferenceDatabase(refs=refs, patch_features=patch_features, build_config=cfg)


def _encode_database(db: ReferenceDatabase) -> bytes:
    sections: List[bytes] = []
    for room_id in db.room_order:
        w = _wire.Writer()
        w.string(room_id)
        _wire.encode_record(w, db.refs[room_id])
        feats = db.patch_features[room_id]
        w.u32(len(feats))
        for f in feats:
            w.u32(f.dim)
            w.f32_block(f.values)
        sections.append(w.getvalue())

    header = _wire.Writer()
    header.raw(_MAGIC)
    header.u32(db.format_version)
    header.string(db.build_config.canonical_json())
    header.u32(len(sections))
    body = b"".join(sections)

    # Offsets are relative to the end of the header (start of the body).
    pos = 0
    for s in sections:
        header.u64(pos)
        header.u64(len(s))
        pos += len(s)

    prefix = header.getvalue()
    # Whole-file checksum lives in the header, computed with its own field
    # zeroed so writing stays single-pass deterministic.
    blank = prefix + struct.pack("<I", 0) + body
    crc = zlib.crc32(blank) & 0xFFFFFFFF
    return prefix + struct.pack("<I", crc) + body


def save_database(db: ReferenceDatabase, path: Path | str) -> None:
    """Persist the index; identical databases yield identical bytes."""
    Path(path).write_bytes(_encode_database(db))


def load_database(path: Path | str) -> ReferenceDatabase:
    """Load a persisted index, verifying version and checksum."""
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"database index not found: {path}")
    data = path.read_bytes()
    r = _wire.Reader(data, "database index")
    magic = r.take(4)
    if magic != _MAGIC:
        raise DataFormatError(f"database index has bad magic {magic!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"database format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    config_json = r.string()
    n_rooms = r.u32()
    ranges = [(r.u64(), r.u64()) for _ in range(n_rooms)]
    checksum_at = r.pos
    stored_crc = r.u32()
    body_start = r.pos

    blank = data[:checksum_at] + struct.pack("<I", 0) + data[body_start:]
    actual = zlib.crc32(blank) & 0xFFFFFFFF
    if actual != stored_crc:
        raise ChecksumError(
            f"database index checksum mismatch (stored {stored_crc:#010x}, computed {actual:#010x})"
        )

    try:
        cfg = ScoringConfig.from_dict(json.loads(config_json))
    except (ValueError, TypeError) as e:
        raise DataFormatError(f"database config snapshot is unreadable: {e}") from e

    refs: Dict[str, SceneRecord] = {}
    patch_features: Dict[str, Tuple[FeatureVector, ...]] = {}
    body = data[body_start:]
    for off, length in ranges:
        if off + length > len(body):
            raise TruncatedFileError(
                f"database index: section range {off}..{off + length} exceeds body of {len(body)} bytes"
            )
        sec = _wire.Reader(body[off : off + length], "database section")
        room_id = sec.string()
        record = _wire.decode_record(sec)
        n_feats = sec.u32()
        feats = []
        for _ in range(n_feats):
            dim = sec.u32()
            feats.append(FeatureVector(sec.f32_block(dim)))
        if not sec.done():
            raise DataFormatError(f"database section for room {room_id!r} has trailing bytes")
        refs[room_id] = record
        patch_features[room_id] = tuple(feats)

    return ReferenceDatabase(
        refs=refs, patch_features=patch_features, build_config=cfg, format_version=version
    )
