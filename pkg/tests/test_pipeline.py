"""Baseline vs filtered grasping loop: outcomes, pairing, reports."""

import numpy as np
import pytest

from tofgrasp.dataset import PoseOffset, PoseRanges, apply_offset
from tofgrasp.features import FeatureConfig, layout_id
from tofgrasp.forest import Hyperparams, fit_forest
from tofgrasp.gripper import GripperConfig
from tofgrasp.pipeline import (
    ComparisonReport,
    Episode,
    GraspCandidate,
    Mode,
    PerfectPredictor,
    PipelineOutcome,
    compare,
    episode_scene,
    feasible_fraction,
    make_episodes,
    run_baseline,
    run_filtered,
    synthesize_candidates,
)
from tofgrasp.zoo import grasp_point, load_preset, nominal_base_pose, table_pose

DESK = load_preset("desk")
BY_ID = {o.object_id: o for o in DESK.objects}
CFG = GripperConfig()


def _candidate(obj, score, **offset) -> GraspCandidate:
    pose_obj = table_pose(obj)
    nominal = nominal_base_pose(obj, pose_obj, CFG)
    off = PoseOffset(**{k: offset.get(k, 0.0)
                        for k in ("x", "y", "z", "roll", "pitch", "yaw")})
    return GraspCandidate(apply_offset(off, nominal, grasp_point(obj, pose_obj)),
                          score)


class _Script:
    """Scores candidates by visit order from a fixed list of probabilities."""

    def __init__(self, probabilities):
        self.probabilities = list(probabilities)
        self.calls = 0

    def __call__(self, scene, candidate, features):
        p = self.probabilities[self.calls]
        self.calls += 1
        return p


# --- run_baseline -----------------------------------------------------------

def test_baseline_executes_the_top_candidate():
    obj = BY_ID["cylinder"]
    out = run_baseline(episode_scene(obj), [_candidate(obj, 1.0)])
    assert out.executed_candidate_index == 0
    assert out.actual and out.failure_reason == "none"
    assert not out.disturbed_object
    assert out.predicted == () and out.candidates_skipped == 0
    assert out.contact_events == 1


def test_baseline_failure_disturbs_the_object():
    obj = BY_ID["cylinder"]
    # 20 cm to the side: the fingers close on air, the episode restarts
    out = run_baseline(episode_scene(obj),
                       [_candidate(obj, 1.0, x=0.2), _candidate(obj, 0.5)])
    assert out.executed_candidate_index == 0
    assert not out.actual
    assert out.disturbed_object
    assert out.contact_events == 0  # a clean miss never touched it


def test_baseline_rejects_empty_and_unsorted_lists():
    obj = BY_ID["cylinder"]
    scene = episode_scene(obj)
    with pytest.raises(ValueError):
        run_baseline(scene, [])
    bad = [_candidate(obj, 0.2), _candidate(obj, 0.9, x=0.01)]
    with pytest.raises(ValueError, match="descending"):
        run_baseline(scene, bad)


# --- run_filtered -----------------------------------------------------------

def test_filtered_skips_a_predicted_failure():
    obj = BY_ID["cylinder"]
    cands = [_candidate(obj, 0.9, x=0.2), _candidate(obj, 0.5)]
    out = run_filtered(episode_scene(obj), cands, CFG, _Script([0.1, 0.95]))
    assert out.executed_candidate_index == 1
    assert out.predicted == (False, True)
    assert out.candidates_skipped == 1
    assert out.actual and not out.disturbed_object
    assert len(out.prediction_latencies_ms) == 2
    assert all(ms > 0.0 for ms in out.prediction_latencies_ms)


def test_filtered_abstains_without_contact():
    obj = BY_ID["cylinder"]
    cands = [_candidate(obj, 0.9), _candidate(obj, 0.5, x=0.2)]
    out = run_filtered(episode_scene(obj), cands, CFG, _Script([0.2, 0.3]),
                       exhaustion="abstain")
    assert out.executed_candidate_index is None
    assert not out.actual and not out.disturbed_object
    assert out.contact_events == 0
    assert out.failure_reason == "abstained"
    assert out.candidates_skipped == 2


def test_filtered_exhaustion_runs_the_most_confident_candidate():
    obj = BY_ID["cylinder"]
    cands = [_candidate(obj, 0.9, x=0.2), _candidate(obj, 0.5)]
    out = run_filtered(episode_scene(obj), cands, CFG, _Script([0.2, 0.45]))
    assert out.executed_candidate_index == 1  # argmax of (0.2, 0.45)
    assert out.predicted == (False, False)
    assert out.actual  # the nominal grasp holds even though it scored low


def test_filtered_requires_a_matching_layout():
    obj = BY_ID["cylinder"]
    X = np.zeros((8, 6))
    y = np.array([0, 1] * 4, dtype=bool)
    model = fit_forest(X, y, Hyperparams(3, 2, 2, seed=1),
                       layout=layout_id(FeatureConfig(cap=0.1)))
    with pytest.raises(ValueError):
        run_filtered(episode_scene(obj), [_candidate(obj, 1.0)], CFG, model)


def test_filtered_requires_a_model_and_a_known_policy():
    obj = BY_ID["cylinder"]
    scene = episode_scene(obj)
    with pytest.raises(ValueError, match="model"):
        run_filtered(scene, [_candidate(obj, 1.0)], CFG, None)
    with pytest.raises(ValueError, match="exhaustion"):
        run_filtered(scene, [_candidate(obj, 1.0)], CFG, _Script([1.0]),
                     exhaustion="retry")


def test_outcome_rejects_inconsistent_fields():
    with pytest.raises(ValueError, match="align"):
        PipelineOutcome(0, (True,), (0.9, 0.8), (1.0,), True, "none", 0,
                        False, 1)
    with pytest.raises(ValueError, match="disturbance"):
        PipelineOutcome(0, (True,), (0.9,), (1.0,), False, "lift_slip", 0,
                        False, 1)
    with pytest.raises(ValueError, match="without execution"):
        PipelineOutcome(None, (False,), (0.1,), (1.0,), True, "none", 1,
                        False, 0)


# --- candidate synthesis ----------------------------------------------------

def test_synthesized_candidates_are_sorted_and_deterministic():
    obj = BY_ID["mug"]
    a = synthesize_candidates(obj, 8, np.random.default_rng(4))
    b = synthesize_candidates(obj, 8, np.random.default_rng(4))
    scores = [c.planner_score for c in a]
    assert scores == sorted(scores, reverse=True)
    assert all(0.0 < s <= 1.0 for s in scores)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.pose.translation, cb.pose.translation)
        assert ca.planner_score == cb.planner_score


def test_nominal_candidate_gets_the_top_score():
    obj = BY_ID["cylinder"]
    collapsed = PoseRanges(x=(0.0, 0.0), y=(0.0, 0.0), z=(0.0, 0.0),
                           roll=(0.0, 0.0), pitch=(0.0, 0.0), yaw=(0.0,))
    [cand] = synthesize_candidates(obj, 1, np.random.default_rng(0),
                                   ranges=collapsed)
    assert cand.planner_score == 1.0


# --- compare ----------------------------------------------------------------

def _episodes(n=12, k=4, seed=31):
    objs = [BY_ID[i] for i in ("cylinder", "box", "mug")]
    return make_episodes(objs, n, k, seed)


def test_identical_modes_show_zero_difference():
    eps = _episodes()
    rep = compare(eps, [Mode("a", "filtered", model=PerfectPredictor()),
                        Mode("b", "filtered", model=PerfectPredictor())])
    a, b = rep.mode("a"), rep.mode("b")
    assert a.success_rate == b.success_rate
    assert a.disturbance_count == b.disturbance_count
    assert a.mean_contacts == b.mean_contacts
    assert a.mean_candidates_visited == b.mean_candidates_visited
    for oa, ob in zip(a.outcomes, b.outcomes):
        assert oa.executed_candidate_index == ob.executed_candidate_index
        assert oa.predicted == ob.predicted
        assert oa.probabilities == ob.probabilities
        assert oa.actual == ob.actual


def test_perfect_predictor_hits_the_feasible_fraction_exactly():
    eps = _episodes(n=15)
    rep = compare(eps, [Mode("baseline", "baseline"),
                        Mode("oracle", "filtered", model=PerfectPredictor())])
    assert rep.mode("oracle").success_rate == feasible_fraction(eps)
    # dominance holds episode by episode, not just on the average
    for base, filt in zip(rep.mode("baseline").outcomes,
                          rep.mode("oracle").outcomes):
        assert filt.actual >= base.actual
    # filtered visits are contact-free: at most the one executed touch
    for out in rep.mode("oracle").outcomes:
        assert out.contact_events <= 1
        if out.executed_candidate_index is None:
            assert out.contact_events == 0


def test_compare_is_reproducible_across_calls_and_processes():
    eps = _episodes(n=8, k=3)
    modes = [Mode("oracle", "filtered", model=PerfectPredictor())]
    serial = compare(eps, modes)
    again = compare(eps, modes)
    pooled = compare(eps, modes, processes=2)
    for ra, rb in ((serial, again), (serial, pooled)):
        for oa, ob in zip(ra.mode("oracle").outcomes, rb.mode("oracle").outcomes):
            assert oa.probabilities == ob.probabilities
            assert oa.actual == ob.actual


def test_compare_rejects_duplicate_names_and_empty_episode_sets():
    eps = _episodes(n=3)
    with pytest.raises(ValueError, match="unique"):
        compare(eps, [Mode("m", "baseline"), Mode("m", "baseline")])
    with pytest.raises(ValueError, match="episode"):
        compare([], [Mode("m", "baseline")])
    with pytest.raises(ValueError, match="model"):
        Mode("m", "filtered")
    with pytest.raises(ValueError, match="kind"):
        Mode("m", "hybrid")


def test_report_table_and_summary_cover_every_mode():
    eps = _episodes(n=6, k=3)
    rep = compare(eps, [Mode("baseline", "baseline"),
                        Mode("oracle", "filtered", model=PerfectPredictor())])
    table = rep.table()
    header, *rows = table.strip().split("\n")
    assert header.startswith("mode,episodes,success_rate,disturbances")
    assert len(rows) == 2
    assert rows[0].split(",")[0] == "baseline"
    assert float(rows[0].split(",")[2]) == rep.mode("baseline").success_rate
    summary = rep.summary()
    assert "baseline" in summary and "oracle" in summary
    with pytest.raises(KeyError):
        rep.mode("nope")
