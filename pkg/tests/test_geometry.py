from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roomreid.errors import UsageError, ValidationError
from roomreid.geometry import (
    AdjacencyMatrix,
    BoundingBox,
    PatchBox,
    Point2,
    center,
    delaunay_adjacency,
    delaunay_triangles,
    expand_receptive_field,
    iou,
    nms,
)

from oracles import brute_force_delaunay_edges, circumcircle, greedy_nms_reference


# --- construction invariants -------------------------------------------------

def test_bounding_box_rejects_nonpositive_extent():
    with pytest.raises(ValidationError):
        BoundingBox(0, 0, 0, 5)
    with pytest.raises(ValidationError):
        BoundingBox(0, 0, 5, -1)


def test_bounding_box_rejects_nonfinite():
    with pytest.raises(ValidationError):
        BoundingBox(float("nan"), 0, 1, 1)
    with pytest.raises(ValidationError):
        BoundingBox(0, float("inf"), 1, 1)


def test_adjacency_requires_symmetry_and_empty_diagonal():
    with pytest.raises(ValidationError):
        AdjacencyMatrix(np.array([[True]]))
    with pytest.raises(ValidationError):
        AdjacencyMatrix(np.array([[False, True], [False, False]]))


# --- center ------------------------------------------------------------------

def test_center_zero_origin():
    assert center(BoundingBox(0, 0, 10, 20)) == Point2(5, 10)


def test_center_offset_box():
    assert center(BoundingBox(2, 4, 10, 20)) == Point2(7, 14)


def test_center_symmetric_about_origin():
    assert center(BoundingBox(-3, -3, 6, 6)) == Point2(0, 0)


# --- iou ---------------------------------------------------------------------

def test_iou_identical_boxes():
    b = BoundingBox(3, 4, 5, 6)
    assert iou(b, b) == 1.0


def test_iou_disjoint_boxes():
    assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 1, 1)) == 0.0


def test_iou_hand_computed_overlap():
    # Overlap area 2, union 6.
    assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 2, 2)) == pytest.approx(1.0 / 3.0)


@given(
    st.tuples(
        st.floats(-100, 100), st.floats(-100, 100), st.floats(0.5, 50), st.floats(0.5, 50)
    ),
    st.tuples(
        st.floats(-100, 100), st.floats(-100, 100), st.floats(0.5, 50), st.floats(0.5, 50)
    ),
)
def test_iou_symmetric_and_bounded(a, b):
    ba, bb = BoundingBox(*a), BoundingBox(*b)
    v1, v2 = iou(ba, bb), iou(bb, ba)
    assert abs(v1 - v2) <= 1e-12
    assert 0.0 <= v1 <= 1.0 + 1e-12


# --- receptive-field expansion -------------------------------------------------

def test_expand_isolated_object_is_unchanged():
    adj = AdjacencyMatrix(np.zeros((1, 1), dtype=bool))
    [patch] = expand_receptive_field([BoundingBox(0, 0, 2, 2)], adj)
    assert patch.box == BoundingBox(0, 0, 2, 2)
    assert patch.seed_index == 0
    assert patch.confidence == 1.0


def test_expand_mutually_adjacent_pair_unions_boxes():
    boxes = [BoundingBox(0, 0, 2, 2), BoundingBox(4, 0, 2, 2)]
    adj = AdjacencyMatrix.from_edges(2, {(0, 1)})
    patches = expand_receptive_field(boxes, adj)
    assert patches[0].box == BoundingBox(0, 0, 6, 2)
    assert patches[1].box == BoundingBox(0, 0, 6, 2)


def test_expand_chain_does_not_leak_beyond_neighbors():
    # A-B and B-C adjacent, A-C not: A's patch must span A and B only.
    boxes = [BoundingBox(0, 0, 1, 1), BoundingBox(4, 0, 1, 1), BoundingBox(8, 0, 1, 1)]
    adj = AdjacencyMatrix.from_edges(3, {(0, 1), (1, 2)})
    patches = expand_receptive_field(boxes, adj)
    assert patches[0].box.x2 == 5.0
    assert patches[0].box.x == 0.0
    assert patches[1].box == BoundingBox(0, 0, 9, 1)
    assert patches[2].box.x == 4.0


def test_expand_inherits_seed_confidence():
    boxes = [BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 2, 2)]
    adj = AdjacencyMatrix.from_edges(2, {(0, 1)})
    patches = expand_receptive_field(boxes, adj, confidences=[0.3, 0.9])
    assert [p.confidence for p in patches] == [0.3, 0.9]


def test_expand_patch_contains_seed_property(rng):
    for _ in range(50):
        n = int(rng.integers(1, 9))
        boxes = [
            BoundingBox(*rng.uniform(0, 100, 2), *rng.uniform(1, 30, 2)) for _ in range(n)
        ]
        centers = [center(b) for b in boxes]
        adj = delaunay_adjacency(centers)
        for patch in expand_receptive_field(boxes, adj):
            assert patch.box.contains(boxes[patch.seed_index])


# --- nms -----------------------------------------------------------------------

def _patch(x, y, w, h, conf, seed):
    return PatchBox(box=BoundingBox(x, y, w, h), seed_index=seed, confidence=conf)


def test_nms_single_patch():
    p = _patch(0, 0, 2, 2, 0.7, 0)
    assert nms([p], 0.5) == [p]


def test_nms_identical_boxes_keep_highest_confidence():
    a = _patch(0, 0, 2, 2, 0.9, 0)
    b = _patch(0, 0, 2, 2, 0.8, 1)
    assert nms([b, a], 0.5) == [a]


def test_nms_matches_reference_greedy(rng):
    for _ in range(100):
        n = int(rng.integers(1, 10))
        boxes = [tuple(rng.uniform(0, 20, 2)) + tuple(rng.uniform(2, 12, 2)) for _ in range(n)]
        confs = [float(c) for c in rng.uniform(0, 1, n)]
        patches = [_patch(*boxes[i], confs[i], i) for i in range(n)]
        thr = float(rng.uniform(0.1, 0.9))
        kept = nms(patches, thr)
        expect = greedy_nms_reference(boxes, confs, thr)
        assert [p.seed_index for p in kept] == expect


def test_nms_survivor_properties(rng):
    for _ in range(40):
        n = int(rng.integers(1, 12))
        patches = [
            _patch(*rng.uniform(0, 15, 2), *rng.uniform(2, 10, 2), float(rng.uniform(0, 1)), i)
            for i in range(n)
        ]
        thr = 0.4
        kept = nms(patches, thr)
        assert all(k in patches for k in kept)
        confs = [k.confidence for k in kept]
        assert confs == sorted(confs, reverse=True)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert iou(kept[i].box, kept[j].box) <= thr


def test_nms_threshold_bounds():
    with pytest.raises(UsageError):
        nms([], 1.5)


# --- Delaunay adjacency ----------------------------------------------------------

def test_delaunay_empty_and_singleton():
    assert delaunay_adjacency([]).n == 0
    single = delaunay_adjacency([Point2(3, 4)])
    assert single.n == 1 and not single.bits.any()


def test_delaunay_pair_is_adjacent():
    adj = delaunay_adjacency([Point2(0, 0), Point2(5, 1)])
    assert adj.edge_set() == {(0, 1)}


def test_delaunay_triangle_all_adjacent():
    adj = delaunay_adjacency([Point2(0, 0), Point2(4, 0), Point2(1, 3)])
    assert adj.edge_set() == {(0, 1), (0, 2), (1, 2)}


def test_delaunay_square_has_one_deterministic_diagonal():
    # Perimeter edges plus exactly the diagonal incident to index 0.
    adj = delaunay_adjacency([Point2(0, 0), Point2(1, 0), Point2(1, 1), Point2(0, 1)])
    assert adj.edge_set() == {(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)}


def test_delaunay_collinear_chain():
    pts = [Point2(4, 0), Point2(0, 0), Point2(2, 0), Point2(6, 0)]
    adj = delaunay_adjacency(pts)
    assert adj.edge_set() == {(1, 2), (0, 2), (0, 3)}


def test_delaunay_duplicates_are_perturbed_not_fatal():
    pts = [Point2(1, 1), Point2(1, 1), Point2(5, 5)]
    adj = delaunay_adjacency(pts)
    assert adj.n == 3
    assert adj.bits.any()


def test_delaunay_matches_brute_force_random(rng):
    for _ in range(120):
        n = int(rng.integers(1, 13))
        pts = rng.uniform(0, 100, size=(n, 2))
        eng = delaunay_adjacency([Point2(float(x), float(y)) for x, y in pts]).edge_set()
        ref = brute_force_delaunay_edges([(float(x), float(y)) for x, y in pts])
        assert eng == ref


def test_delaunay_kept_triangles_have_empty_circumcircles(rng):
    for _ in range(60):
        n = int(rng.integers(3, 13))
        raw = [(float(x), float(y)) for x, y in rng.uniform(0, 50, size=(n, 2))]
        tris = delaunay_triangles([Point2(x, y) for x, y in raw])
        for i, j, k in tris:
            cc = circumcircle(raw[i], raw[j], raw[k])
            assert cc is not None
            (ux, uy), r2 = cc
            for m, (px, py) in enumerate(raw):
                if m in (i, j, k):
                    continue
                assert (px - ux) ** 2 + (py - uy) ** 2 >= r2 - 1e-9 * max(1.0, r2)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(-512, 512).map(lambda v: v / 4.0),
            st.integers(-512, 512).map(lambda v: v / 4.0),
        ),
        min_size=0,
        max_size=10,
    )
)
def test_delaunay_always_symmetric_empty_diagonal(coords):
    adj = delaunay_adjacency([Point2(x, y) for x, y in coords])
    assert adj.n == len(coords)
    assert np.array_equal(adj.bits, adj.bits.T)
    if adj.n:
        assert not adj.bits.diagonal().any()


def test_purity_same_inputs_same_outputs(rng):
    pts = [Point2(float(x), float(y)) for x, y in rng.uniform(0, 30, size=(8, 2))]
    a = delaunay_adjacency(pts)
    b = delaunay_adjacency(pts)
    assert a == b
    box = BoundingBox(1.5, 2.5, 3.5, 4.5)
    assert center(box) == center(box)
    assert iou(box, BoundingBox(2, 2, 3, 3)) == iou(box, BoundingBox(2, 2, 3, 3))
