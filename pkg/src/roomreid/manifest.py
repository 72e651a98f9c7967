"""Dataset manifest format: the engine's on-disk dataset contract.

A dataset is a directory holding two files:

``manifest``
    Header: magic ``RRMF``, format version, dataset name, feature
    dimensions (global / selection / object / keypoint), the object
    confidence floor already applied by the producer, record count and
    per-record byte ranges into ``records.bin``, then a CRC32 trailer.

``records.bin``
    One blob per record (split tag byte followed by the record encoding
    from :mod:`roomreid._wire`), then a CRC32 trailer.

Round-trips are bit-exact: loading a dataset and writing it again
reproduces the original bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from . import _wire
from .errors import DataFormatError, TruncatedFileError, ValidationError, VersionMismatchError
from .records import SceneRecord

FORMAT_VERSION = 1
_MAGIC = b"RRMF"

SPLIT_QUERY = "query"
SPLIT_REFERENCE_POOL = "referencepool"
_SPLIT_CODES = {SPLIT_QUERY: 0, SPLIT_REFERENCE_POOL: 1}
_SPLIT_NAMES = {v: k for k, v in _SPLIT_CODES.items()}


@dataclass(frozen=True)
class Dataset:
    """A loaded manifest: records plus their split tags."""

    name: str
    records: Tuple[SceneRecord, ...]
    split_of: Dict[str, str]
    object_conf_floor: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if r.image_id in seen:
                raise ValidationError(f"duplicate image_id {r.image_id!r} in dataset {self.name!r}")
            seen.add(r.image_id)
            if r.image_id not in self.split_of:
                raise ValidationError(f"record {r.image_id!r} has no split tag")
            if self.split_of[r.image_id] not in _SPLIT_CODES:
                raise ValidationError(
                    f"record {r.image_id!r} has unknown split {self.split_of[r.image_id]!r}"
                )

    def queries(self) -> List[SceneRecord]:
        return [r for r in self.records if self.split_of[r.image_id] == SPLIT_QUERY]

    def reference_pool(self) -> List[SceneRecord]:
        return [r for r in self.records if self.split_of[r.image_id] == SPLIT_REFERENCE_POOL]

    def truth(self) -> Dict[str, str]:
        return {r.image_id: r.room_id for r in self.records}


def _dataset_dims(records: Sequence[SceneRecord]) -> Tuple[int, int, int, int]:
    gdim = sdim = odim = kdim = 0
    for r in records:
        gdim = gdim or r.global_feature.dim
        if r.selection_embedding is not None:
            sdim = sdim or r.selection_embedding.dim
        odim = odim or r.object_feature_dim
        kdim = kdim or r.keypoint_dim
    return gdim, sdim, odim, kdim


def _validate_against_dims(records: Sequence[SceneRecord], dims: Tuple[int, int, int, int]) -> None:
    gdim, sdim, odim, kdim = dims
    for r in records:
        if r.global_feature.dim != gdim:
            raise ValidationError(
                f"global feature of {r.image_id!r} has dimension {r.global_feature.dim}, "
                f"dataset declares {gdim}"
            )
        _wire.require_nonzero(r.global_feature, f"global feature of {r.image_id!r}")
        if r.selection_embedding is not None:
            if sdim and r.selection_embedding.dim != sdim:
                raise ValidationError(
                    f"selection embedding of {r.image_id!r} has dimension "
                    f"{r.selection_embedding.dim}, dataset declares {sdim}"
                )
            _wire.require_nonzero(r.selection_embedding, f"selection embedding of {r.image_id!r}")
        if r.objects and odim and r.object_feature_dim != odim:
            raise ValidationError(
                f"object features of {r.image_id!r} have dimension {r.object_feature_dim}, "
                f"dataset declares {odim}"
            )
        for o in r.objects:
            _wire.require_nonzero(o.feature, f"object feature in {r.image_id!r}")
        if r.keypoint_descriptors and kdim and r.keypoint_dim != kdim:
            raise ValidationError(
                f"keypoint descriptors of {r.image_id!r} have dimension {r.keypoint_dim}, "
                f"dataset declares {kdim}"
            )
        for k in r.keypoint_descriptors:
            _wire.require_nonzero(k, f"keypoint descriptor in {r.image_id!r}")


def write_dataset(dataset: Dataset, path: Path | str) -> None:
    """Persist a dataset directory; same dataset, same bytes."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    dims = _dataset_dims(dataset.records)
    _validate_against_dims(dataset.records, dims)

    blobs: List[bytes] = []
    for record in dataset.records:
        w = _wire.Writer()
        w.u8(_SPLIT_CODES[dataset.split_of[record.image_id]])
        _wire.encode_record(w, record)
        blobs.append(w.getvalue())

    offsets: List[Tuple[int, int]] = []
    pos = 0
    for b in blobs:
        offsets.append((pos, len(b)))
        pos += len(b)

    header = _wire.Writer()
    header.raw(_MAGIC)
    header.u32(FORMAT_VERSION)
    header.string(dataset.name)
    for d in dims:
        header.u32(d)
    header.f32(dataset.object_conf_floor)
    header.u32(len(blobs))
    for off, length in offsets:
        header.u64(off)
        header.u64(length)

    (path / "manifest").write_bytes(_wire.append_crc(header.getvalue()))
    (path / "records.bin").write_bytes(_wire.append_crc(b"".join(blobs)))


def load_dataset(path: Path | str) -> Dataset:
    """Load and validate a dataset directory."""
    path = Path(path)
    header_path = path / "manifest"
    records_path = path / "records.bin"
    if not header_path.is_file():
        raise DataFormatError(f"manifest not found: {header_path}")
    if not records_path.is_file():
        raise DataFormatError(f"manifest records not found: {records_path}")

    header = _wire.Reader(_wire.split_crc(header_path.read_bytes(), "manifest"), "manifest")
    magic = header.take(4)
    if magic != _MAGIC:
        raise DataFormatError(f"manifest has bad magic {magic!r}")
    version = header.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"manifest format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    name = header.string()
    dims = tuple(header.u32() for _ in range(4))
    conf_floor = header.f32()
    count = header.u32()
    ranges = [(header.u64(), header.u64()) for _ in range(count)]
    if not header.done():
        raise DataFormatError("manifest header has trailing bytes")

    payload = _wire.split_crc(records_path.read_bytes(), "records.bin")
    records: List[SceneRecord] = []
    split_of: Dict[str, str] = {}
    for off, length in ranges:
        if off + length > len(payload):
            raise TruncatedFileError(
                f"records.bin: record range {off}..{off + length} exceeds payload of {len(payload)} bytes"
            )
        r = _wire.Reader(payload[off : off + length], "record")
        split_code = r.u8()
        if split_code not in _SPLIT_NAMES:
            raise DataFormatError(f"record at offset {off} has unknown split code {split_code}")
        record = _wire.decode_record(r)
        if not r.done():
            raise DataFormatError(f"record {record.image_id!r} has trailing bytes")
        records.append(record)
        split_of[record.image_id] = _SPLIT_NAMES[split_code]

    _validate_against_dims(records, dims)  # type: ignore[arg-type]
    return Dataset(name=name, records=tuple(records), split_of=split_of, object_conf_floor=conf_floor)
