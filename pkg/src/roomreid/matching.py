"""Vector-similarity kernel: cosine scores, similarity matrices, top-k
selection and mutual-nearest-neighbor match extraction.

All similarity arithmetic runs in double precision regardless of how the
vectors were stored on disk.  Every tie is broken by ascending index so
repeated runs produce identical rankings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatchError, UsageError, ValidationError


@dataclass(frozen=True)
class FeatureVector:
    """An immutable real vector with its Euclidean norm cached."""

    values: np.ndarray
    norm: float = field(init=False)

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValidationError(f"feature vector must be 1-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValidationError("feature vector must have dimension > 0")
        if not np.isfinite(arr).all():
            raise ValidationError("feature vector contains non-finite entries")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "norm", float(np.linalg.norm(arr)))

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"FeatureVector(dim={self.dim}, norm={self.norm:.6g})"


@dataclass(frozen=True)
class SimilarityMatrix:
    """Dense cosine-similarity matrix between query and reference rows."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"similarity matrix must be 2-D, got shape {arr.shape}")
        if arr.size and (arr.min() < -1.0 - 1e-9 or arr.max() > 1.0 + 1e-9):
            raise ValidationError("similarity entries must lie in [-1, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class MnnMatchSet:
    """Mutual-nearest-neighbor matches as (query_index, ref_index, score)."""

    pairs: Tuple[Tuple[int, int, float], ...]

    def scores(self) -> List[float]:
        return [s for _, _, s in self.pairs]

    def __len__(self) -> int:
        return len(self.pairs)


def cosine(a: FeatureVector, b: FeatureVector) -> float:
    """Cosine similarity a.b / (|a||b|)."""
    if a.dim != b.dim:
        raise DimensionMismatchError(a.dim, b.dim, "cosine")
    if a.norm == 0.0 or b.norm == 0.0:
        raise ValidationError("cosine is undefined for zero vectors")
    return float(np.dot(a.values, b.values) / (a.norm * b.norm))


def similarity_matrix(
    queries: Sequence[FeatureVector], refs: Sequence[FeatureVector]
) -> SimilarityMatrix:
    """Entry (i, j) is cosine(queries[i], refs[j]).

    Computed cell by cell with the scalar cosine so the matrix is bitwise
    identical to the per-pair results no matter how work is partitioned.
    """
    out = np.zeros((len(queries), len(refs)), dtype=np.float64)
    for i, q in enumerate(queries):
        for j, r in enumerate(refs):
            out[i, j] = cosine(q, r)
    return SimilarityMatrix(out)


def top_k(scores: Sequence[float], k: int) -> List[int]:
    """Indices of the min(k, len) largest scores, descending, ties broken
    by ascending index."""
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise UsageError("top_k over an empty score row")
    order = np.argsort(-arr, kind="stable")
    return [int(i) for i in order[: min(k, arr.size)]]


def mutual_nearest_neighbors(
    qs: Sequence[FeatureVector], rs: Sequence[FeatureVector]
) -> MnnMatchSet:
    """Pairs (i, j) where j is query i's best reference and i is reference
    j's best query; argmax ties fall to the lowest index on both sides.
    Either empty side yields an empty match set."""
    if not qs or not rs:
        return MnnMatchSet(())
    sims = similarity_matrix(qs, rs).entries
    best_ref = np.argmax(sims, axis=1)  # first max wins: lowest index
    best_query = np.argmax(sims, axis=0)
    pairs = []
    for i in range(len(qs)):
        j = int(best_ref[i])
        if int(best_query[j]) == i:
            pairs.append((i, j, float(sims[i, j])))
    return MnnMatchSet(tuple(pairs))
