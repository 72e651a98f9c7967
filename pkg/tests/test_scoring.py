from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roomreid.errors import UsageError, ValidationError
from roomreid.matching import FeatureVector
from roomreid.scoring import (
    ScoreBreakdown,
    ScoringConfig,
    aggregate,
    object_aware_score,
    refine_candidates,
)

from conftest import fv
from oracles import double_argmax_mnn


# --- config -------------------------------------------------------------------

def test_config_defaults():
    cfg = ScoringConfig()
    assert cfg.patch_strategy == "max"
    assert cfg.object_strategy == "mean"
    assert cfg.stage1_k == 5 and cfg.stage2_k == 2
    assert cfg.nms_iou == 0.5 and cfg.object_conf_threshold == 0.0


def test_config_validation():
    with pytest.raises(ValidationError):
        ScoringConfig(patch_strategy="median")
    with pytest.raises(ValidationError):
        ScoringConfig(stage1_k=2, stage2_k=3)
    with pytest.raises(ValidationError):
        ScoringConfig(nms_iou=1.5)
    with pytest.raises(ValidationError):
        ScoringConfig.from_dict({"bogus_key": 1})


def test_config_round_trips_through_dict():
    cfg = ScoringConfig(stage1_k=7, stage2_k=3, use_patch=False, nms_iou=0.4)
    assert ScoringConfig.from_dict(cfg.to_dict()) == cfg


# --- aggregate -----------------------------------------------------------------

def test_aggregate_singleton_both_strategies():
    assert aggregate([0.5], "mean") == 0.5
    assert aggregate([0.5], "max") == 0.5


def test_aggregate_hand_values():
    scores = [0.2, 0.4, 0.9]
    assert aggregate(scores, "mean") == pytest.approx(0.5, abs=1e-12)
    assert aggregate(scores, "max") == 0.9


def test_aggregate_empty_set_is_zero():
    assert aggregate([], "mean") == 0.0
    assert aggregate([], "max") == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=12))
def test_aggregate_max_dominates_mean(scores):
    assert aggregate(scores, "max") >= aggregate(scores, "mean") - 1e-12


# --- object_aware_score -----------------------------------------------------------

def _all_flags(use_global, use_patch, use_object):
    return ScoringConfig(use_global=use_global, use_patch=use_patch, use_object=use_object)


def test_score_all_terms_disabled_is_zero(rng):
    cfg = _all_flags(False, False, False)
    sets = [FeatureVector(rng.normal(size=4)) for _ in range(3)]
    bd = object_aware_score(0.77, sets, sets, sets, sets, cfg)
    assert bd == ScoreBreakdown(0.0, 0.0, 0.0, 0.0)


def test_score_identical_vector_everywhere_totals_three():
    v = [fv(1.0, 2.0)]
    bd = object_aware_score(1.0, v, v, v, v, ScoringConfig())
    assert bd.s_global == 1.0
    assert bd.s_patch == pytest.approx(1.0, abs=1e-12)
    assert bd.s_object == pytest.approx(1.0, abs=1e-12)
    assert bd.total == pytest.approx(3.0, abs=1e-12)


def test_score_matches_brute_force_composition(rng):
    for _ in range(30):
        qp = [FeatureVector(rng.normal(size=4)) for _ in range(int(rng.integers(0, 5)))]
        rp = [FeatureVector(rng.normal(size=4)) for _ in range(int(rng.integers(0, 5)))]
        qo = [FeatureVector(rng.normal(size=4)) for _ in range(int(rng.integers(0, 6)))]
        ro = [FeatureVector(rng.normal(size=4)) for _ in range(int(rng.integers(0, 6)))]
        s_global = float(rng.uniform(-1, 1))
        cfg = ScoringConfig()
        bd = object_aware_score(s_global, qp, rp, qo, ro, cfg)

        def agg(pairs, how):
            scores = [s for _, _, s in pairs]
            if not scores:
                return 0.0
            return max(scores) if how == "max" else float(np.mean(scores))

        patch = agg(double_argmax_mnn([v.values for v in qp], [v.values for v in rp]), "max")
        obj = agg(double_argmax_mnn([v.values for v in qo], [v.values for v in ro]), "mean")
        assert bd.s_patch == pytest.approx(patch, abs=1e-12)
        assert bd.s_object == pytest.approx(obj, abs=1e-12)
        assert bd.total == pytest.approx(s_global + patch + obj, abs=1e-12)


def test_score_terms_bounded(rng):
    for _ in range(20):
        qp = [FeatureVector(rng.normal(size=3)) for _ in range(3)]
        bd = object_aware_score(float(rng.uniform(-1, 1)), qp, qp, qp, qp, ScoringConfig())
        for term in (bd.s_global, bd.s_patch, bd.s_object):
            assert -1.0 - 1e-9 <= term <= 1.0 + 1e-9
        assert -3.0 - 1e-9 <= bd.total <= 3.0 + 1e-9


def test_score_monotone_in_global_term(rng):
    qp = [FeatureVector(rng.normal(size=4)) for _ in range(3)]
    cfg = ScoringConfig()
    base = object_aware_score(0.2, qp, qp, qp, qp, cfg)
    bumped = object_aware_score(0.2 + 0.125, qp, qp, qp, qp, cfg)
    assert bumped.total - base.total == pytest.approx(0.125, abs=1e-12)


def test_score_all_eight_flag_combinations_execute(rng):
    qp = [FeatureVector(rng.normal(size=4)) for _ in range(2)]
    for ug, up, uo in itertools.product((True, False), repeat=3):
        cfg = _all_flags(ug, up, uo)
        bd = object_aware_score(0.4, qp, qp, qp, qp, cfg)
        assert bd.total == pytest.approx(bd.s_global + bd.s_patch + bd.s_object, abs=1e-12)
        if not ug:
            assert bd.s_global == 0.0
        if not up:
            assert bd.s_patch == 0.0
        if not uo:
            assert bd.s_object == 0.0


# --- refine_candidates --------------------------------------------------------------

def _bd(total):
    return ScoreBreakdown(s_global=total, s_patch=0.0, s_object=0.0, total=total)


def test_refine_hand_sorted_with_tie_break():
    ranked = refine_candidates(
        [("a", _bd(1.2)), ("b", _bd(3.4)), ("c", _bd(0.9)), ("d", _bd(2.0)), ("e", _bd(2.0))],
        k=2,
    )
    assert ranked == ["b", "d"]


def test_refine_single_candidate_short_list():
    assert refine_candidates([("only", _bd(0.5))], k=2) == ["only"]


def test_refine_all_equal_keeps_stage1_order():
    ranked = refine_candidates([(c, _bd(1.0)) for c in "abcd"], k=3)
    assert ranked == ["a", "b", "c"]


def test_refine_empty_list_is_error():
    with pytest.raises(UsageError):
        refine_candidates([], k=1)


def test_refine_prefix_property_when_only_global_enabled(rng):
    # Stage-1 order in, stage-1 order out when totals equal the priors.
    sims = sorted((float(s) for s in rng.uniform(-1, 1, 5)), reverse=True)
    entries = [(f"c{i}", _bd(s)) for i, s in enumerate(sims)]
    assert refine_candidates(entries, k=5) == [c for c, _ in entries]
