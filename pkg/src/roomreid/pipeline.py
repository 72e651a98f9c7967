"""Three-stage retrieval cascade: global retrieval, object-aware
refinement, fine-grained re-ranking.

Each query produces a :class:`RetrievalResult` trace carrying the ranked
candidates of every stage, the score breakdowns, the fine-grained match
counts and per-stage wall-clock timings.  Apart from the timings, results
are fully deterministic and independent of worker count.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from . import geometry
from .database import ReferenceDatabase, reference_patches
from .errors import DimensionMismatchError, ProviderError, UsageError
from .matching import FeatureVector, cosine, top_k
from .providers import ProviderBundle, builtin_fine_matcher, default_bundle
from .records import SceneRecord
from .scoring import ScoreBreakdown, ScoringConfig, object_aware_score, refine_candidates

__all__ = [
    "STAGE_LABELS",
    "RetrievalResult",
    "QueryFailure",
    "query",
    "query_batch",
    "builtin_fine_matcher",
    "ProviderBundle",
]

TRACE_SCHEMA = "roomreid-trace/1"

# The seven per-query stages every timing report breaks down into.
STAGE_LABELS = (
    "Global Feature Extractor",
    "Global Retrieval",
    "Instance Segmentation",
    "Receptive Field Expander",
    "Object Feature Extractor",
    "Object-Aware Scoring",
    "Fine-Grained Retrieval",
)


@dataclass(frozen=True)
class RetrievalResult:
    """Full per-query trace of the cascade."""

    query_image_id: str
    stage1: Tuple[Tuple[str, float], ...]
    stage2: Tuple[Tuple[str, ScoreBreakdown], ...]
    final_room_id: str
    fine_match_counts: Dict[str, int]
    timings_us: Dict[str, float]

    def comparable(self):
        """Everything except the timings, for determinism checks."""
        return (
            self.query_image_id,
            self.stage1,
            self.stage2,
            self.final_room_id,
            tuple(sorted(self.fine_match_counts.items())),
        )

    def trace_line(self) -> str:
        """One self-describing JSON line for downstream tooling."""
        payload = {
            "schema": TRACE_SCHEMA,
            "query": self.query_image_id,
            "stage1": [[room, s] for room, s in self.stage1],
            "stage2": [[room, bd.as_dict()] for room, bd in self.stage2],
            "final": self.final_room_id,
            "fine_matches": dict(sorted(self.fine_match_counts.items())),
            "timings_us": {k: self.timings_us[k] for k in STAGE_LABELS},
        }
        return json.dumps(payload, separators=(",", ":"))


@dataclass(frozen=True)
class QueryFailure:
    """Per-item failure marker returned by query_batch."""

    query_image_id: str
    stage: str
    message: str


class _StageClock:
    def __init__(self):
        self.timings = {label: 0.0 for label in STAGE_LABELS}

    def measure(self, label: str):
        clock = self

        class _Ctx:
            def __enter__(self):
                self._t0 = time.perf_counter_ns()

            def __exit__(self, *exc):
                clock.timings[label] += (time.perf_counter_ns() - self._t0) / 1000.0
                return False

        return _Ctx()


def _call_provider(fn, lock: Optional[threading.Lock]):
    if lock is None:
        return fn()
    with lock:
        return fn()


def _query_feature_sets(
    q: SceneRecord,
    cfg: ScoringConfig,
    providers: ProviderBundle,
    clock: _StageClock,
    lock: Optional[threading.Lock],
) -> Tuple[List[FeatureVector], List[FeatureVector]]:
    """Query-side patch and object feature sets, per the ablation flags."""
    with clock.measure("Instance Segmentation"):
        objects = q.thresholded_objects(cfg.object_conf_threshold)

    patches: List[geometry.PatchBox] = []
    if cfg.use_patch:
        with clock.measure("Receptive Field Expander"):
            boxes = [o.box for o in objects]
            centers = [geometry.center(b) for b in boxes]
            adj = geometry.delaunay_adjacency(centers)
            expanded = geometry.expand_receptive_field(boxes, adj, [o.confidence for o in objects])
            patches = geometry.nms(expanded, cfg.nms_iou)

    query_patches: List[FeatureVector] = []
    if cfg.use_patch and patches:
        with clock.measure("Object Feature Extractor"):
            try:
                query_patches = _call_provider(
                    lambda: providers.patch_feature_provider(q, patches), lock
                )
            except Exception as e:  # noqa: BLE001 - provider errors carry context
                raise ProviderError("Object Feature Extractor", q.image_id, e) from e

    query_objects = [o.feature for o in objects] if cfg.use_object else []
    return query_patches, query_objects


def query(
    q: SceneRecord,
    db: ReferenceDatabase,
    cfg: ScoringConfig,
    providers: Optional[ProviderBundle] = None,
    _provider_lock: Optional[threading.Lock] = None,
) -> RetrievalResult:
    """Run the full cascade for one query record.

    Stage 1 ranks every reference by global cosine similarity and keeps the
    top stage1_k.  Stage 2 rescores those candidates with the object-aware
    sum and keeps the top stage2_k.  Stage 3, when enabled, asks the fine
    matcher for keypoint match counts and picks the candidate with strictly
    more matches, falling back to stage-2 order on ties.
    """
    if len(db) == 0:
        raise UsageError("query against an empty database")
    providers = providers or default_bundle()
    clock = _StageClock()
    rooms = db.room_order

    # The engine consumes precomputed features, so the extractor stage only
    # validates the query vector; it still gets its own timing label.
    with clock.measure("Global Feature Extractor"):
        ref_dim = db.refs[rooms[0]].global_feature.dim
        if q.global_feature.dim != ref_dim:
            raise DimensionMismatchError(q.global_feature.dim, ref_dim, "global features")
        qvec = q.global_feature

    with clock.measure("Global Retrieval"):
        sims = [cosine(qvec, db.refs[room].global_feature) for room in rooms]
        stage1_idx = top_k(sims, min(cfg.stage1_k, len(rooms)))
        stage1 = tuple((rooms[i], sims[i]) for i in stage1_idx)

    query_patches, query_objects = _query_feature_sets(q, cfg, providers, clock, _provider_lock)

    with clock.measure("Object-Aware Scoring"):
        breakdowns: List[Tuple[str, ScoreBreakdown]] = []
        for room, s_global in stage1:
            ref_patches_f = list(db.patch_features[room]) if cfg.use_patch else []
            ref_objects_f = (
                [o.feature for o in db.reference_objects(room)] if cfg.use_object else []
            )
            bd = object_aware_score(
                s_global, query_patches, ref_patches_f, query_objects, ref_objects_f, cfg
            )
            breakdowns.append((room, bd))
        stage2_ids = refine_candidates(breakdowns, min(cfg.stage2_k, len(breakdowns)))
        by_room = dict(breakdowns)
        stage2 = tuple((room, by_room[room]) for room in stage2_ids)

    fine_counts: Dict[str, int] = {}
    with clock.measure("Fine-Grained Retrieval"):
        if cfg.use_fine_grained:
            for room, _ in stage2:
                try:
                    fine_counts[room] = int(
                        _call_provider(lambda: providers.fine_matcher(q, db.refs[room]), _provider_lock)
                    )
                except Exception as e:  # noqa: BLE001
                    raise ProviderError("Fine-Grained Retrieval", q.image_id, e) from e
            final = min(
                range(len(stage2)),
                key=lambda i: (-fine_counts[stage2[i][0]], i),
            )
            final_room = stage2[final][0]
        else:
            final_room = stage2[0][0]

    return RetrievalResult(
        query_image_id=q.image_id,
        stage1=stage1,
        stage2=stage2,
        final_room_id=final_room,
        fine_match_counts=fine_counts,
        timings_us=clock.timings,
    )


def query_batch(
    queries: Sequence[SceneRecord],
    db: ReferenceDatabase,
    cfg: ScoringConfig,
    providers: Optional[ProviderBundle] = None,
    workers: int = 1,
) -> List[Union[RetrievalResult, QueryFailure]]:
    """Run queries independently; order is preserved and failures are
    isolated per item rather than aborting the batch."""
    if workers < 1:
        raise UsageError(f"workers must be >= 1, got {workers}")
    providers = providers or default_bundle()
    lock = None if providers.thread_safe else threading.Lock()

    def run_one(q: SceneRecord) -> Union[RetrievalResult, QueryFailure]:
        try:
            return query(q, db, cfg, providers, _provider_lock=lock)
        except ProviderError as e:
            return QueryFailure(query_image_id=q.image_id, stage=e.stage, message=str(e))
        except Exception as e:  # noqa: BLE001 - batch isolation contract
            return QueryFailure(query_image_id=q.image_id, stage="", message=str(e))

    if workers == 1 or len(queries) <= 1:
        return [run_one(q) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_one, queries))
