"""Independent reference implementations used as test oracles.

These are deliberately written from the definitions, without importing the
engine's geometry or matching internals, so agreement is meaningful.
"""

from __future__ import annotations

import itertools
import math
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np


def brute_force_delaunay_edges(points: Sequence[Tuple[float, float]]) -> Set[Tuple[int, int]]:
    """Accept a triangle iff its circumcircle strictly contains no other
    point (1e-9 relative slack); edges of accepted triangles."""
    n = len(points)
    edges: Set[Tuple[int, int]] = set()
    if n == 2:
        return {(0, 1)}
    for i, j, k in itertools.combinations(range(n), 3):
        (x1, y1), (x2, y2), (x3, y3) = points[i], points[j], points[k]
        d = 2.0 * (x1 * (y2 - y3) + x2 * (y3 - y1) + x3 * (y1 - y2))
        if d == 0.0:
            continue
        s1, s2, s3 = x1 * x1 + y1 * y1, x2 * x2 + y2 * y2, x3 * x3 + y3 * y3
        ux = (s1 * (y2 - y3) + s2 * (y3 - y1) + s3 * (y1 - y2)) / d
        uy = (s1 * (x3 - x2) + s2 * (x1 - x3) + s3 * (x2 - x1)) / d
        r2 = (x1 - ux) ** 2 + (y1 - uy) ** 2
        ok = True
        for m, (px, py) in enumerate(points):
            if m in (i, j, k):
                continue
            if (px - ux) ** 2 + (py - uy) ** 2 < r2 - 1e-9 * max(1.0, r2):
                ok = False
                break
        if ok:
            edges.update({(min(i, j), max(i, j)), (min(j, k), max(j, k)), (min(i, k), max(i, k))})
    return edges


def greedy_nms_reference(
    boxes: Sequence[Tuple[float, float, float, float]],
    confidences: Sequence[float],
    threshold: float,
) -> List[int]:
    """Straight-line greedy suppression; returns kept indices in pick order."""

    def box_iou(a, b):
        ax1, ay1, aw, ah = a
        bx1, by1, bw, bh = b
        iw = min(ax1 + aw, bx1 + bw) - max(ax1, bx1)
        ih = min(ay1 + ah, by1 + bh) - max(ay1, by1)
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        return inter / (aw * ah + bw * bh - inter)

    remaining = sorted(range(len(boxes)), key=lambda i: (-confidences[i], i))
    kept: List[int] = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [i for i in remaining if box_iou(boxes[i], boxes[best]) <= threshold]
    return kept


def double_argmax_mnn(
    qs: Sequence[np.ndarray], rs: Sequence[np.ndarray]
) -> List[Tuple[int, int, float]]:
    """Exhaustive mutual-nearest-neighbor pairs with cosine scores."""
    if not qs or not rs:
        return []

    def cos(a, b):
        return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

    sims = [[cos(a, b) for b in rs] for a in qs]
    pairs = []
    for i in range(len(qs)):
        j = max(range(len(rs)), key=lambda jj: (sims[i][jj], -jj))
        back = max(range(len(qs)), key=lambda ii: (sims[ii][j], -ii))
        if back == i:
            pairs.append((i, j, sims[i][j]))
    return pairs


def sort_topk(scores: Sequence[float], k: int) -> List[int]:
    """Full sort by (-score, index), prefix of length min(k, n)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order[: min(k, len(scores))]


def circumcircle(p1, p2, p3):
    """Center and squared radius, or None for collinear points."""
    (x1, y1), (x2, y2), (x3, y3) = p1, p2, p3
    d = 2.0 * (x1 * (y2 - y3) + x2 * (y3 - y1) + x3 * (y1 - y2))
    if d == 0.0:
        return None
    s1, s2, s3 = x1 * x1 + y1 * y1, x2 * x2 + y2 * y2, x3 * x3 + y3 * y3
    ux = (s1 * (y2 - y3) + s2 * (y3 - y1) + s3 * (y1 - y2)) / d
    uy = (s1 * (x3 - x2) + s2 * (x1 - x3) + s3 * (x2 - x1)) / d
    r2 = (x1 - ux) ** 2 + (y1 - uy) ** 2
    return (ux, uy), r2
