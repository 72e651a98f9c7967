"""Deterministic synthetic scene generator and a framework-free oracle.

The generator builds rooms out of object prototypes and renders
viewpoint-perturbed observations: feature noise, object dropout and box
jitter, all driven by one seed.  Box jitter scales with the feature noise
(12 px per unit of sigma), so a zero-noise spec reproduces bitwise
identical views.

``oracle_rank`` re-derives the full cascade for one query as straight-line
arithmetic.  It deliberately shares no code with the engine's geometry,
matching, scoring or pipeline modules; it only reads the record data
types.  Tests compare the two implementations end to end.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import ValidationError
from .manifest import SPLIT_QUERY, SPLIT_REFERENCE_POOL, Dataset
from .matching import FeatureVector
from .records import ObjectInstance, SceneRecord
from .geometry import BoundingBox
from .scoring import ScoringConfig

_CANVAS_W = 640.0
_CANVAS_H = 480.0
_BOX_JITTER_PER_SIGMA = 12.0
_ROOM_OFFSET_WEIGHT = 0.5
_POOL_VIEWS = 3
# Viewpoint noise hits the coarse channels hardest: the scene-level feature
# takes the full sigma, object crops (re-centered on the object) take less,
# and keypoint descriptors are the most viewpoint-stable of all.  This is
# the robustness ordering that makes a coarse-to-fine cascade worthwhile.
_OBJECT_NOISE_FACTOR = 0.6
_KEYPOINT_NOISE_FACTOR = 0.3


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of the synthetic world."""

    n_rooms: int
    objects_per_room: Tuple[int, int]
    feature_dim: int = 16
    keypoints_per_image: Tuple[int, int] = (4, 10)
    viewpoint_noise: float = 0.0
    dropout: float = 0.0
    distractor_similarity: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_rooms < 1:
            raise ValidationError(f"n_rooms must be >= 1, got {self.n_rooms}")
        lo, hi = self.objects_per_room
        if not (0 <= lo <= hi):
            raise ValidationError(f"objects_per_room range is empty: {self.objects_per_room}")
        klo, khi = self.keypoints_per_image
        if not (0 <= klo <= khi):
            raise ValidationError(f"keypoints_per_image range is empty: {self.keypoints_per_image}")
        if self.feature_dim < 1:
            raise ValidationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.viewpoint_noise < 0:
            raise ValidationError(f"viewpoint_noise must be >= 0, got {self.viewpoint_noise}")
        if not (0.0 <= self.dropout < 1.0):
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if not (0.0 <= self.distractor_similarity < 1.0):
            raise ValidationError(
                f"distractor_similarity must be in [0, 1), got {self.distractor_similarity}"
            )


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    n = np.linalg.norm(v)
    if n == 0.0:
        v[0] = 1.0
        n = 1.0
    return v / n


def _f32(arr: np.ndarray) -> np.ndarray:
    """Clamp to wire precision so manifests round-trip bit-exactly."""
    return arr.astype(np.float32).astype(np.float64)


def _nonzero_f32_vector(arr: np.ndarray) -> FeatureVector:
    vals = _f32(arr)
    if not np.any(vals):
        vals = vals.copy()
        vals[0] = 1e-6
    return FeatureVector(vals)


@dataclass
class _RoomModel:
    room_id: str
    object_protos: np.ndarray       # (n_obj, dim)
    base_boxes: List[Tuple[float, float, float, float]]
    confidences: List[float]
    keypoint_protos: np.ndarray     # (n_kp, dim)
    offset: np.ndarray


def _build_rooms(spec: SynthSpec, rng: np.random.Generator) -> List[_RoomModel]:
    alpha = spec.distractor_similarity
    shared = _unit(rng, spec.feature_dim)
    rooms = []
    lo, hi = spec.objects_per_room
    klo, khi = spec.keypoints_per_image
    for r in range(spec.n_rooms):
        n_obj = int(rng.integers(lo, hi + 1))
        protos = np.stack(
            [(1.0 - alpha) * _unit(rng, spec.feature_dim) + alpha * shared for _ in range(n_obj)]
        ) if n_obj else np.zeros((0, spec.feature_dim))
        boxes = []
        for _ in range(n_obj):
            w = float(rng.uniform(30.0, 120.0))
            h = float(rng.uniform(30.0, 120.0))
            cx = float(rng.uniform(40.0, _CANVAS_W - 40.0))
            cy = float(rng.uniform(40.0, _CANVAS_H - 40.0))
            boxes.append((cx - w / 2.0, cy - h / 2.0, w, h))
        confs = [float(rng.uniform(0.25, 1.0)) for _ in range(n_obj)]
        n_kp = int(rng.integers(klo, khi + 1))
        kps = np.stack(
            [(1.0 - alpha) * _unit(rng, spec.feature_dim) + alpha * shared for _ in range(n_kp)]
        ) if n_kp else np.zeros((0, spec.feature_dim))
        offset = _unit(rng, spec.feature_dim)
        rooms.append(
            _RoomModel(
                room_id=f"room{r:03d}",
                object_protos=protos,
                base_boxes=boxes,
                confidences=confs,
                keypoint_protos=kps,
                offset=offset,
            )
        )
    return rooms


def _render_view(
    room: _RoomModel, spec: SynthSpec, rng: np.random.Generator, image_id: str
) -> SceneRecord:
    sigma = spec.viewpoint_noise
    jitter = _BOX_JITTER_PER_SIGMA * sigma
    dim = spec.feature_dim

    obj_sigma = _OBJECT_NOISE_FACTOR * sigma
    objects: List[ObjectInstance] = []
    survivors: List[np.ndarray] = []
    for i in range(room.object_protos.shape[0]):
        dropped = rng.random() < spec.dropout
        feat = room.object_protos[i] + rng.normal(0.0, obj_sigma, dim) if sigma > 0 else room.object_protos[i].copy()
        x, y, w, h = room.base_boxes[i]
        dx, dy = rng.normal(0.0, jitter, 2) if jitter > 0 else (0.0, 0.0)
        dw, dh = rng.normal(0.0, jitter / 2.0, 2) if jitter > 0 else (0.0, 0.0)
        if dropped:
            continue
        box = BoundingBox(
            float(np.float32(x + dx)),
            float(np.float32(y + dy)),
            float(np.float32(max(4.0, w + dw))),
            float(np.float32(max(4.0, h + dh))),
        )
        fv = _nonzero_f32_vector(feat)
        conf = float(np.float32(room.confidences[i]))
        objects.append(ObjectInstance(box=box, confidence=conf, feature=fv))
        survivors.append(room.object_protos[i])

    mean_part = np.mean(np.stack(survivors), axis=0) if survivors else np.zeros(dim)
    g = mean_part + _ROOM_OFFSET_WEIGHT * room.offset
    if sigma > 0:
        g = g + rng.normal(0.0, sigma, dim)
    norm = np.linalg.norm(g)
    g = g / norm if norm > 0 else room.offset

    kp_sigma = _KEYPOINT_NOISE_FACTOR * sigma
    keypoints = []
    for i in range(room.keypoint_protos.shape[0]):
        kp = room.keypoint_protos[i] + rng.normal(0.0, kp_sigma, dim) if sigma > 0 else room.keypoint_protos[i].copy()
        keypoints.append(_nonzero_f32_vector(kp))

    return SceneRecord(
        image_id=image_id,
        room_id=room.room_id,
        global_feature=_nonzero_f32_vector(g),
        objects=tuple(objects),
        keypoint_descriptors=tuple(keypoints),
        selection_embedding=None,
    )


def make_dataset(spec: SynthSpec, views_per_room: int, name: str = "synthetic") -> Dataset:
    """Render a full dataset: a small reference pool plus query views per
    room, all derived from one seed."""
    if views_per_room < 1:
        raise ValidationError(f"views_per_room must be >= 1, got {views_per_room}")
    rng = np.random.default_rng(spec.rng_seed)
    rooms = _build_rooms(spec, rng)
    records: List[SceneRecord] = []
    split_of: Dict[str, str] = {}
    for room in rooms:
        for v in range(_POOL_VIEWS):
            rec = _render_view(room, spec, rng, f"{room.room_id}_ref{v}")
            records.append(rec)
            split_of[rec.image_id] = SPLIT_REFERENCE_POOL
        for v in range(views_per_room):
            rec = _render_view(room, spec, rng, f"{room.room_id}_q{v:02d}")
            records.append(rec)
            split_of[rec.image_id] = SPLIT_QUERY
    return Dataset(name=name, records=tuple(records), split_of=split_of, object_conf_floor=0.0)


def generate(spec: SynthSpec, views_per_room: int) -> Tuple[List[SceneRecord], Dict[str, str]]:
    """Records plus the ground-truth image-to-room map."""
    ds = make_dataset(spec, views_per_room)
    return list(ds.records), ds.truth()


# ---------------------------------------------------------------------------
# Straight-line oracle.  Everything below is a deliberate, independent
# re-derivation of the cascade used only for differential testing.

@dataclass(frozen=True)
class OracleRanking:
    stage1: Tuple[str, ...]
    stage2: Tuple[str, ...]
    final: str
    fine_counts: Dict[str, int]


def _o_cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def _o_descending(scores: List[float], k: int) -> List[int]:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order[:k]


def _o_delaunay_edges(centers: List[Tuple[float, float]]) -> Set[Tuple[int, int]]:
    """Brute force: a triangle belongs to the triangulation iff its
    circumcircle strictly contains no other point (1e-9 relative slack);
    degenerate layouts use the documented fallbacks."""
    n = len(centers)
    if n <= 1:
        return set()
    pts: List[Tuple[float, float]] = []
    seen = set()
    for x, y in centers:
        while (x, y) in seen:
            x += 1e-6
        seen.add((x, y))
        pts.append((x, y))
    if n == 2:
        return {(0, 1)}

    # Collinear fallback: nearest-neighbor chain along the dominant line.
    far = max(itertools.combinations(range(n), 2),
              key=lambda ij: (pts[ij[0]][0] - pts[ij[1]][0]) ** 2 + (pts[ij[0]][1] - pts[ij[1]][1]) ** 2)
    (ax, ay), (bx, by) = pts[far[0]], pts[far[1]]
    length = math.hypot(bx - ax, by - ay)
    if length > 0 and all(
        abs((bx - ax) * (y - ay) - (by - ay) * (x - ax)) / length <= 1e-9 * max(1.0, length)
        for x, y in pts
    ):
        order = sorted(range(n), key=lambda k_: ((pts[k_][0] - ax) * (bx - ax) + (pts[k_][1] - ay) * (by - ay), k_))
        return {(min(u, v), max(u, v)) for u, v in zip(order, order[1:])}

    arr = np.asarray(pts)
    edges: Set[Tuple[int, int]] = set()
    for i, j, k in itertools.combinations(range(n), 3):
        (x1, y1), (x2, y2), (x3, y3) = pts[i], pts[j], pts[k]
        d = 2.0 * (x1 * (y2 - y3) + x2 * (y3 - y1) + x3 * (y1 - y2))
        if d == 0.0:
            continue
        s1 = x1 * x1 + y1 * y1
        s2 = x2 * x2 + y2 * y2
        s3 = x3 * x3 + y3 * y3
        ux = (s1 * (y2 - y3) + s2 * (y3 - y1) + s3 * (y1 - y2)) / d
        uy = (s1 * (x3 - x2) + s2 * (x1 - x3) + s3 * (x2 - x1)) / d
        r2 = (x1 - ux) ** 2 + (y1 - uy) ** 2
        dist2 = (arr[:, 0] - ux) ** 2 + (arr[:, 1] - uy) ** 2
        dist2[[i, j, k]] = r2
        if np.all(dist2 >= r2 - 1e-9 * max(1.0, r2)):
            edges.update({(min(i, j), max(i, j)), (min(j, k), max(j, k)), (min(i, k), max(i, k))})
    return edges


def _o_patch_boxes(
    objects: Sequence[ObjectInstance], conf_threshold: float, nms_iou: float
) -> List[Tuple[float, float, float, float]]:
    kept = [o for o in objects if o.confidence >= conf_threshold]
    centers = [(o.box.x + o.box.w / 2.0, o.box.y + o.box.h / 2.0) for o in kept]
    edges = _o_delaunay_edges(centers)
    neighbors: Dict[int, List[int]] = {i: [] for i in range(len(kept))}
    for u, v in edges:
        neighbors[u].append(v)
        neighbors[v].append(u)

    raw: List[Tuple[float, float, float, float, float, int]] = []
    for i, o in enumerate(kept):
        members = [kept[i]] + [kept[j] for j in neighbors[i]]
        x1 = min(m.box.x for m in members)
        y1 = min(m.box.y for m in members)
        x2 = max(m.box.x + m.box.w for m in members)
        y2 = max(m.box.y + m.box.h for m in members)
        raw.append((x1, y1, x2 - x1, y2 - y1, o.confidence, i))

    def box_iou(a, b):
        iw = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
        ih = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        return inter / (a[2] * a[3] + b[2] * b[3] - inter)

    survivors: List[Tuple[float, float, float, float]] = []
    for cand in sorted(raw, key=lambda t: (-t[4], t[5])):
        box = cand[:4]
        if all(box_iou(box, s) <= nms_iou for s in survivors):
            survivors.append(box)
    return survivors


def _o_patch_features(record: SceneRecord, boxes) -> List[np.ndarray]:
    feats = []
    for bx, by, bw, bh in boxes:
        x2, y2 = bx + bw, by + bh
        eps = 1e-9 * max(1.0, abs(bx), abs(by), abs(x2), abs(y2))
        inside = [
            o.feature.values
            for o in record.objects
            if o.box.x >= bx - eps
            and o.box.y >= by - eps
            and o.box.x + o.box.w <= x2 + eps
            and o.box.y + o.box.h <= y2 + eps
        ]
        feats.append(np.mean(np.stack(inside), axis=0))
    return feats


def _o_mnn_scores(qs: List[np.ndarray], rs: List[np.ndarray]) -> List[float]:
    if not qs or not rs:
        return []
    sims = np.array([[_o_cosine(a, b) for b in rs] for a in qs])
    scores = []
    for i in range(len(qs)):
        j = int(np.argmax(sims[i]))
        if int(np.argmax(sims[:, j])) == i:
            scores.append(float(sims[i, j]))
    return scores


def _o_aggregate(scores: List[float], strategy: str) -> float:
    if not scores:
        return 0.0
    arr = np.asarray(scores, dtype=np.float64)
    return float(arr.mean()) if strategy == "mean" else float(arr.max())


def oracle_rank(q: SceneRecord, refs: Sequence[SceneRecord], cfg: ScoringConfig) -> OracleRanking:
    """Recompute the cascade for one query without the engine.

    ``refs`` holds exactly one already-selected reference record per room.
    """
    refs = sorted(refs, key=lambda r: r.room_id)
    rooms = [r.room_id for r in refs]

    sims = [_o_cosine(q.global_feature.values, r.global_feature.values) for r in refs]
    k1 = min(cfg.stage1_k, len(refs))
    stage1_idx = _o_descending(sims, k1)

    t = cfg.object_conf_threshold
    q_objects = [o.feature.values for o in q.objects if o.confidence >= t] if cfg.use_object else []
    q_patch_feats: List[np.ndarray] = []
    if cfg.use_patch:
        q_patch_feats = _o_patch_features(q, _o_patch_boxes(q.objects, t, cfg.nms_iou))

    totals: List[float] = []
    for idx in stage1_idx:
        ref = refs[idx]
        total = sims[idx] if cfg.use_global else 0.0
        if cfg.use_patch:
            r_patch_feats = _o_patch_features(ref, _o_patch_boxes(ref.objects, t, cfg.nms_iou))
            total += _o_aggregate(_o_mnn_scores(q_patch_feats, r_patch_feats), cfg.patch_strategy)
        if cfg.use_object:
            r_objects = [o.feature.values for o in ref.objects if o.confidence >= t]
            total += _o_aggregate(_o_mnn_scores(q_objects, r_objects), cfg.object_strategy)
        totals.append(total)

    k2 = min(cfg.stage2_k, len(stage1_idx))
    stage2_pos = sorted(range(len(stage1_idx)), key=lambda p: (-totals[p], p))[:k2]
    stage2_idx = [stage1_idx[p] for p in stage2_pos]

    fine_counts: Dict[str, int] = {}
    if cfg.use_fine_grained:
        counts = []
        for idx in stage2_idx:
            ref = refs[idx]
            qk = [v.values for v in q.keypoint_descriptors]
            rk = [v.values for v in ref.keypoint_descriptors]
            cnt = sum(1 for s in _o_mnn_scores(qk, rk) if s >= 0.9)
            counts.append(cnt)
            fine_counts[rooms[idx]] = cnt
        best = min(range(len(stage2_idx)), key=lambda p: (-counts[p], p))
        final = rooms[stage2_idx[best]]
    else:
        final = rooms[stage2_idx[0]]

    return OracleRanking(
        stage1=tuple(rooms[i] for i in stage1_idx),
        stage2=tuple(rooms[i] for i in stage2_idx),
        final=final,
        fine_counts=fine_counts,
    )
