"""Object-aware scoring: combine the global prior with patch and object
match scores under configurable mean/max strategies, and rank candidates.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import UsageError, ValidationError
from .matching import FeatureVector, mutual_nearest_neighbors

STRATEGIES = ("mean", "max")


def _check_strategy(kind: str) -> str:
    if kind not in STRATEGIES:
        raise ValidationError(f"unknown score strategy {kind!r}, expected one of {STRATEGIES}")
    return kind


@dataclass(frozen=True)
class ScoreBreakdown:
    """Per-candidate score terms; disabled terms are stored as exactly 0."""

    s_global: float
    s_patch: float
    s_object: float
    total: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "global": self.s_global,
            "patch": self.s_patch,
            "object": self.s_object,
            "total": self.total,
        }


@dataclass(frozen=True)
class ScoringConfig:
    """Cascade fan-outs, scoring strategies and ablation switches."""

    patch_strategy: str = "max"
    object_strategy: str = "mean"
    use_global: bool = True
    use_patch: bool = True
    use_object: bool = True
    use_fine_grained: bool = True
    stage1_k: int = 5
    stage2_k: int = 2
    nms_iou: float = 0.5
    object_conf_threshold: float = 0.0

    def __post_init__(self):
        _check_strategy(self.patch_strategy)
        _check_strategy(self.object_strategy)
        if self.stage1_k < 1 or self.stage2_k < 1:
            raise ValidationError(f"stage fan-outs must be >= 1, got {self.stage1_k} and {self.stage2_k}")
        if self.stage2_k > self.stage1_k:
            raise ValidationError(f"stage2_k ({self.stage2_k}) must not exceed stage1_k ({self.stage1_k})")
        if not (0.0 <= self.nms_iou <= 1.0):
            raise ValidationError(f"nms_iou must be in [0, 1], got {self.nms_iou!r}")
        if not (0.0 <= self.object_conf_threshold <= 1.0):
            raise ValidationError(
                f"object_conf_threshold must be in [0, 1], got {self.object_conf_threshold!r}"
            )

    def replace(self, **changes) -> "ScoringConfig":
        cfg = asdict(self)
        cfg.update(changes)
        return ScoringConfig(**cfg)

    def to_dict(self) -> Dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Dict) -> "ScoringConfig":
        known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown scoring config keys: {sorted(unknown)}")
        return cls(**data)


def aggregate(scores: Iterable[float], strategy: str) -> float:
    """Collapse a set of match scores to one number.

    ``mean`` averages, ``max`` takes the maximum; an empty set scores 0.0,
    which is neutral inside the score sum.
    """
    _check_strategy(strategy)
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size == 0:
        return 0.0
    return float(arr.mean()) if strategy == "mean" else float(arr.max())


def object_aware_score(
    s_global: float,
    query_patches: Sequence[FeatureVector],
    ref_patches: Sequence[FeatureVector],
    query_objects: Sequence[FeatureVector],
    ref_objects: Sequence[FeatureVector],
    cfg: ScoringConfig,
) -> ScoreBreakdown:
    """Combined candidate score: global prior plus patch and object terms.

    The patch and object terms aggregate cosine scores of mutual nearest
    neighbors between the query and reference feature sets; any term whose
    ablation flag is off contributes exactly 0.
    """
    g = float(s_global) if cfg.use_global else 0.0
    p = (
        aggregate(mutual_nearest_neighbors(query_patches, ref_patches).scores(), cfg.patch_strategy)
        if cfg.use_patch
        else 0.0
    )
    o = (
        aggregate(mutual_nearest_neighbors(query_objects, ref_objects).scores(), cfg.object_strategy)
        if cfg.use_object
        else 0.0
    )
    return ScoreBreakdown(s_global=g, s_patch=p, s_object=o, total=g + p + o)


def refine_candidates(
    breakdowns: Sequence[Tuple[str, ScoreBreakdown]], k: int
) -> List[str]:
    """Rank candidates by descending total score and keep the first k.

    ``breakdowns`` must arrive in stage-1 rank order; equal totals fall back
    to that order, then to the candidate id.
    """
    if not breakdowns:
        raise UsageError("refine_candidates over an empty candidate list")
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    order = sorted(
        enumerate(breakdowns),
        key=lambda item: (-item[1][1].total, item[0], item[1][0]),
    )
    return [cid for _, (cid, _) in order[: min(k, len(breakdowns))]]
