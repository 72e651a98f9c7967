"""Planar geometry kernel: boxes, object centers, Delaunay adjacency,
receptive-field patch expansion and non-maximum suppression.

Everything here is a pure function over immutable inputs; no shared state,
safe to call from any number of workers.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import InvariantViolation, UsageError, ValidationError

# Tolerance used for the co-circular and collinear degeneracy tests.
_EPS = 1e-9
# Super-triangle distance, in units of the input spread.
_SUPER_SCALE = 1e5
# Shift applied to the x coordinate of duplicated centers.
_DUP_NUDGE = 1e-6


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box anchored at its top-left corner."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"bounding box field {name} is not finite: {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"bounding box must have positive extent, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def contains(self, other: "BoundingBox") -> bool:
        """True when ``other`` lies fully inside this box.

        Edges are inclusive with a 1e-9 relative slack: a union box stored
        as (x, y, w, h) cannot represent its right and bottom edges exactly,
        so member boxes may overhang by one rounding step.
        """
        eps = _EPS * max(1.0, abs(self.x), abs(self.y), abs(self.x2), abs(self.y2))
        return (
            other.x >= self.x - eps
            and other.y >= self.y - eps
            and other.x2 <= self.x2 + eps
            and other.y2 <= self.y2 + eps
        )


@dataclass(frozen=True)
class Point2:
    """A finite 2-D point in pixel coordinates."""

    px: float
    py: float

    def __post_init__(self):
        if not (math.isfinite(self.px) and math.isfinite(self.py)):
            raise ValidationError(f"point coordinates must be finite, got ({self.px!r}, {self.py!r})")


class AdjacencyMatrix:
    """Symmetric boolean object-adjacency matrix with an empty diagonal."""

    __slots__ = ("n", "bits")

    def __init__(self, bits: np.ndarray):
        arr = np.asarray(bits, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValidationError(f"adjacency matrix must be square, got shape {arr.shape}")
        if arr.shape[0] and arr.diagonal().any():
            raise ValidationError("adjacency matrix diagonal must be empty")
        if not np.array_equal(arr, arr.T):
            raise ValidationError("adjacency matrix must be symmetric")
        arr = arr.copy()
        arr.setflags(write=False)
        self.n = arr.shape[0]
        self.bits = arr

    @classmethod
    def from_edges(cls, n: int, edges: Set[Tuple[int, int]]) -> "AdjacencyMatrix":
        bits = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            if i == j:
                raise ValidationError(f"self edge ({i}, {j}) is not allowed")
            bits[i, j] = True
            bits[j, i] = True
        return cls(bits)

    def neighbors(self, i: int) -> List[int]:
        return [int(j) for j in np.flatnonzero(self.bits[i])]

    def edge_set(self) -> Set[Tuple[int, int]]:
        ii, jj = np.nonzero(self.bits)
        return {(int(a), int(b)) for a, b in zip(ii, jj) if a < b}

    def __eq__(self, other) -> bool:
        if not isinstance(other, AdjacencyMatrix):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.bits, other.bits)

    def __repr__(self) -> str:
        return f"AdjacencyMatrix(n={self.n}, edges={sorted(self.edge_set())})"


@dataclass(frozen=True)
class PatchBox:
    """An object's box enlarged to cover its adjacent objects.

    ``confidence`` is inherited from the seed object's detection confidence,
    which is what the NMS step ranks by.
    """

    box: BoundingBox
    seed_index: int
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"patch confidence must be in [0, 1], got {self.confidence!r}")
        if self.seed_index < 0:
            raise ValidationError(f"seed index must be nonnegative, got {self.seed_index}")


def center(b: BoundingBox) -> Point2:
    """Geometric center of a box: (x + w/2, y + h/2)."""
    return Point2(b.x + b.w / 2.0, b.y + b.h / 2.0)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def expand_receptive_field(
    objects: Sequence[BoundingBox],
    adj: AdjacencyMatrix,
    confidences: Optional[Sequence[float]] = None,
) -> List[PatchBox]:
    """Grow each object's box into the minimal box covering it and all of
    its adjacent objects' boxes.

    ``confidences`` supplies each seed's detection confidence (defaults to
    1.0 for every object); an object with no neighbors yields its own box.
    """
    if adj.n != len(objects):
        raise UsageError(f"adjacency is {adj.n}x{adj.n} but there are {len(objects)} objects")
    if confidences is None:
        confidences = [1.0] * len(objects)
    elif len(confidences) != len(objects):
        raise UsageError(f"{len(confidences)} confidences for {len(objects)} objects")

    patches: List[PatchBox] = []
    for i, own in enumerate(objects):
        members = [own] + [objects[j] for j in adj.neighbors(i)]
        x1 = min(m.x for m in members)
        y1 = min(m.y for m in members)
        x2 = max(m.x2 for m in members)
        y2 = max(m.y2 for m in members)
        patches.append(
            PatchBox(
                box=BoundingBox(x1, y1, x2 - x1, y2 - y1),
                seed_index=i,
                confidence=float(confidences[i]),
            )
        )
    return patches


def nms(patches: Sequence[PatchBox], iou_threshold: float) -> List[PatchBox]:
    """Greedy non-maximum suppression over patches.

    Repeatedly keeps the highest-confidence remaining patch and discards
    every remaining patch whose IoU with it exceeds ``iou_threshold``.
    Survivors come back sorted by descending confidence, ties broken by
    ascending seed index.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise UsageError(f"iou threshold must be in [0, 1], got {iou_threshold!r}")
    order = sorted(patches, key=lambda p: (-p.confidence, p.seed_index))
    kept: List[PatchBox] = []
    for cand in order:
        if all(iou(cand.box, k.box) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


def delaunay_adjacency(centers: Sequence[Point2]) -> AdjacencyMatrix:
    """Adjacency of object centers under a Delaunay triangulation.

    Two objects are adjacent iff they share a triangulation edge.  Degenerate
    inputs never fail: zero or one center gives an empty matrix, two centers
    are adjacent, a fully collinear set becomes the nearest-neighbor chain
    along the line, and exact duplicates are nudged apart before
    triangulating.  Co-circular ties are resolved toward the diagonal
    incident to the lowest input index.
    """
    n = len(centers)
    if n == 0:
        return AdjacencyMatrix(np.zeros((0, 0), dtype=bool))
    if n == 1:
        return AdjacencyMatrix(np.zeros((1, 1), dtype=bool))

    pts = _dedupe([(p.px, p.py) for p in centers])
    if n == 2:
        return AdjacencyMatrix.from_edges(2, {(0, 1)})

    chain = _collinear_chain(pts)
    if chain is not None:
        return AdjacencyMatrix.from_edges(n, chain)

    triangles = _bowyer_watson(pts)
    triangles = _canonicalize_cocircular(pts, triangles)
    edges: Set[Tuple[int, int]] = set()
    for a, b, c in triangles:
        for u, v in ((a, b), (b, c), (a, c)):
            edges.add((min(u, v), max(u, v)))
    return AdjacencyMatrix.from_edges(n, edges)


def delaunay_triangles(centers: Sequence[Point2]) -> List[Tuple[int, int, int]]:
    """Triangles of the internal triangulation, for inspection and tests.

    Empty for degenerate inputs (fewer than three centers, or collinear
    sets, which fall back to chain adjacency).
    """
    n = len(centers)
    if n < 3:
        return []
    pts = _dedupe([(p.px, p.py) for p in centers])
    if _collinear_chain(pts) is not None:
        return []
    triangles = _bowyer_watson(pts)
    triangles = _canonicalize_cocircular(pts, triangles)
    return sorted(tuple(sorted(t)) for t in triangles)


# ---------------------------------------------------------------------------
# Internal triangulation machinery

def _dedupe(points: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    seen: Set[Tuple[float, float]] = set()
    out: List[Tuple[float, float]] = []
    for x, y in points:
        while (x, y) in seen:
            x += _DUP_NUDGE
        seen.add((x, y))
        out.append((x, y))
    return out


def _collinear_chain(pts: List[Tuple[float, float]]) -> Optional[Set[Tuple[int, int]]]:
    """Chain edges when every point lies on one line, else None."""
    n = len(pts)
    # Baseline: the farthest pair, for a numerically meaningful direction.
    best = (0.0, 0, 1)
    for i in range(n):
        for j in range(i + 1, n):
            d2 = (pts[i][0] - pts[j][0]) ** 2 + (pts[i][1] - pts[j][1]) ** 2
            if d2 > best[0]:
                best = (d2, i, j)
    _, i0, j0 = best
    ax, ay = pts[i0]
    bx, by = pts[j0]
    length = math.hypot(bx - ax, by - ay)
    if length == 0.0:
        return None
    tol = _EPS * max(1.0, length)
    for x, y in pts:
        perp = abs((bx - ax) * (y - ay) - (by - ay) * (x - ax)) / length
        if perp > tol:
            return None
    order = sorted(range(n), key=lambda k: ((pts[k][0] - ax) * (bx - ax) + (pts[k][1] - ay) * (by - ay), k))
    return {(min(u, v), max(u, v)) for u, v in zip(order, order[1:])}


def _orient(ax: float, ay: float, bx: float, by: float, cx: float, cy: float) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _ccw(pts, tri: Tuple[int, int, int]) -> Tuple[int, int, int]:
    a, b, c = tri
    if _orient(*pts[a], *pts[b], *pts[c]) < 0.0:
        return (a, c, b)
    return (a, b, c)


def _incircle(pts, tri: Tuple[int, int, int], d: int) -> Tuple[float, float]:
    """Signed in-circumcircle determinant for a CCW triangle, plus a
    magnitude proxy for tolerance scaling.  det > 0 means strictly inside."""
    (ax, ay), (bx, by), (cx, cy) = pts[tri[0]], pts[tri[1]], pts[tri[2]]
    dx, dy = pts[d]
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    ad2 = adx * adx + ady * ady
    bd2 = bdx * bdx + bdy * bdy
    cd2 = cdx * cdx + cdy * cdy
    det = (
        adx * (bdy * cd2 - cdy * bd2)
        - ady * (bdx * cd2 - cdx * bd2)
        + ad2 * (bdx * cdy - cdx * bdy)
    )
    mag = (
        abs(adx) * (abs(bdy * cd2) + abs(cdy * bd2))
        + abs(ady) * (abs(bdx * cd2) + abs(cdx * bd2))
        + abs(ad2) * (abs(bdx * cdy) + abs(cdx * bdy))
    )
    return det, mag


def _bowyer_watson(real_pts: List[Tuple[float, float]]) -> List[Tuple[int, int, int]]:
    n = len(real_pts)
    xs = [p[0] for p in real_pts]
    ys = [p[1] for p in real_pts]
    cx = (min(xs) + max(xs)) / 2.0
    cy = (min(ys) + max(ys)) / 2.0
    span = max(max(xs) - min(xs), max(ys) - min(ys), 1.0)
    m = _SUPER_SCALE * span
    pts = list(real_pts) + [
        (cx - 1.25 * m, cy - 0.75 * m),
        (cx + 1.25 * m, cy - 0.75 * m),
        (cx, cy + 1.1 * m),
    ]

    triangles: List[Tuple[int, int, int]] = [_ccw(pts, (n, n + 1, n + 2))]
    for p in range(n):
        bad = [t for t in triangles if _incircle(pts, t, p)[0] > 0.0]
        if not bad:
            # Point fell exactly on a circle boundary; claim the triangle
            # that contains it so the insertion stays total.
            for t in triangles:
                a, b, c = t
                o1 = _orient(*pts[a], *pts[b], *pts[p])
                o2 = _orient(*pts[b], *pts[c], *pts[p])
                o3 = _orient(*pts[c], *pts[a], *pts[p])
                if o1 >= 0.0 and o2 >= 0.0 and o3 >= 0.0:
                    bad = [t]
                    break
        if not bad:
            raise InvariantViolation("triangulation insertion found no cavity")

        edge_count: Counter = Counter()
        for a, b, c in bad:
            for u, v in ((a, b), (b, c), (c, a)):
                edge_count[(min(u, v), max(u, v))] += 1
        boundary = [e for e, cnt in edge_count.items() if cnt == 1]
        if any(cnt > 2 for cnt in edge_count.values()):
            raise InvariantViolation("triangulation cavity is not edge-manifold")

        bad_set = set(bad)
        triangles = [t for t in triangles if t not in bad_set]
        for u, v in boundary:
            triangles.append(_ccw(pts, (u, v, p)))

    return [t for t in triangles if all(v < n for v in t)]


def _canonicalize_cocircular(
    pts: List[Tuple[float, float]], triangles: List[Tuple[int, int, int]]
) -> List[Tuple[int, int, int]]:
    """Flip co-circular quads toward the diagonal with the lowest vertex
    index, so exact ties (squares, grids) come out deterministically."""
    tris = [_ccw(pts, t) for t in triangles]
    for _ in range(1000):
        edge_map = {}
        for idx, (a, b, c) in enumerate(tris):
            for u, v in ((a, b), (b, c), (c, a)):
                edge_map.setdefault((min(u, v), max(u, v)), []).append(idx)
        flipped = False
        for (u, v) in sorted(edge_map):
            owners = edge_map[(u, v)]
            if len(owners) != 2:
                continue
            t1, t2 = tris[owners[0]], tris[owners[1]]
            w1 = next(x for x in t1 if x not in (u, v))
            w2 = next(x for x in t2 if x not in (u, v))
            if min(w1, w2) >= min(u, v):
                continue
            det, mag = _incircle(pts, _ccw(pts, (u, v, w1)), w2)
            if abs(det) > _EPS * mag:
                continue
            # Flip only across a strictly convex quad.
            s1 = _orient(*pts[w1], *pts[w2], *pts[u])
            s2 = _orient(*pts[w1], *pts[w2], *pts[v])
            s3 = _orient(*pts[u], *pts[v], *pts[w1])
            s4 = _orient(*pts[u], *pts[v], *pts[w2])
            if s1 * s2 >= 0.0 or s3 * s4 >= 0.0:
                continue
            tris[owners[0]] = _ccw(pts, (w1, w2, u))
            tris[owners[1]] = _ccw(pts, (w1, w2, v))
            flipped = True
            break
        if not flipped:
            break
    return tris
