"""The grasping loop as a state machine, baseline vs prediction-filtered.

An episode is one object on the table plus a ranked list of grasp
candidates. The baseline controller commits to the top-ranked candidate
blind; a failed attempt knocks the object around and the episode ends in a
restart. The filtered controller visits candidates in rank order without
touching anything — move to the open pose, read both sensors, featurize,
predict — and only closes the fingers on the first candidate the classifier
likes. Both controllers share the dataset generator's trial mechanics, so
what the classifier saw in training is exactly what it sees here.

`compare` replays the same episodes under several controllers and reports
paired statistics; captures are re-seeded per episode, so two identical
modes produce identical outcomes.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import (
    PoseRanges,
    apply_offset,
    approach_collides,
    capture_pair,
    object_key,
    sample_poses,
)
from .features import FeatureConfig, featurize_reading
from .forest import ForestModel, predict_proba
from .geometry import Pose
from .gripper import GripperConfig, close_fingers, label_grasp, open_state
from .scene import Scene
from .tof import SensorConfig
from .zoo import (
    DEFAULT_RANGES,
    ZooObject,
    grasp_point,
    nominal_base_pose,
    table_pose,
    trial_scene,
)

EXHAUSTION_POLICIES = ("execute_best_scored", "abstain")

# sensor readings at 15 Hz: one classification cycle per visited candidate
CYCLE_S = 1.0 / 15.0

# rng stream tags, disjoint from the dataset's (1, 2) and evalsel's (10, 11)
_CANDIDATE_STREAM = 20
_CAPTURE_STREAM = 21


@dataclass(frozen=True)
class GraspCandidate:
    """One pose a planner proposed, with its rank score (higher is better)."""

    pose: Pose
    planner_score: float


@dataclass(frozen=True)
class EpisodeScene:
    """The world one episode plays out in.

    `obj` carries the geometry the oracle judges against, `object_pose`
    where it sits, and `world` the collision/sensing scene (object plus
    table) both controllers act in.
    """

    obj: ZooObject
    object_pose: Pose
    world: Scene


def episode_scene(obj: ZooObject, object_pose: Pose | None = None) -> EpisodeScene:
    pose = object_pose if object_pose is not None else table_pose(obj)
    return EpisodeScene(obj, pose, trial_scene(obj, pose))


@dataclass(frozen=True)
class PipelineOutcome:
    """What one episode did and how it ended.

    `predicted`, `probabilities` and `prediction_latencies_ms` have one
    entry per visited candidate, in visit order (empty for the baseline,
    which never predicts). `executed_candidate_index` is None when the
    controller abstained; `actual` is then False — no grasp happened.
    `contact_events` counts physical touches: the executed attempt if its
    fingers (or its approach) met the object, and nothing else, because
    visits read from the contact-free open pose.
    """

    executed_candidate_index: int | None
    predicted: tuple
    probabilities: tuple
    prediction_latencies_ms: tuple
    actual: bool
    failure_reason: str
    candidates_skipped: int
    disturbed_object: bool
    contact_events: int

    def __post_init__(self):
        if not (len(self.predicted) == len(self.probabilities)
                == len(self.prediction_latencies_ms)):
            raise ValueError("per-visit tuples must align")
        if self.executed_candidate_index is None and self.actual:
            raise ValueError("an episode without execution cannot succeed")
        if self.disturbed_object != (
                self.executed_candidate_index is not None and not self.actual):
            raise ValueError("disturbance means an executed, failed attempt")

    @property
    def candidates_visited(self) -> int:
        """Candidates the controller considered (baseline: the one executed)."""
        if self.predicted:
            return len(self.predicted)
        return 0 if self.executed_candidate_index is None else 1


def _checked(candidates) -> tuple:
    candidates = tuple(candidates)
    if not candidates:
        raise ValueError("need at least one candidate")
    scores = [c.planner_score for c in candidates]
    if any(a < b for a, b in zip(scores, scores[1:])):
        raise ValueError("candidates must be sorted by descending planner_score")
    return candidates


def _execute(scene: EpisodeScene, pose: Pose, cfg: GripperConfig):
    """Run one physical attempt: (success, reason, touched the object?)."""
    state = open_state(pose, cfg)
    if approach_collides(state, scene.obj, scene.object_pose, cfg):
        return False, "no_contact", True  # barged into the object on approach
    outcome = close_fingers(state, scene.world, cfg)
    success, reason = label_grasp(outcome, scene.obj.shape, scene.object_pose, cfg)
    return success, reason, bool(outcome.contacts)


def run_baseline(scene: EpisodeScene, candidates,
                 gripper: GripperConfig | None = None) -> PipelineOutcome:
    """Execute the top-ranked candidate, no questions asked.

    Any failed attempt leaves the object disturbed and the episode ends as
    a failure-with-restart; that restart cost is what the filtered
    controller exists to avoid.
    """
    cfg = gripper or GripperConfig()
    candidates = _checked(candidates)
    success, reason, touched = _execute(scene, candidates[0].pose, cfg)
    return PipelineOutcome(
        executed_candidate_index=0, predicted=(), probabilities=(),
        prediction_latencies_ms=(), actual=success, failure_reason=reason,
        candidates_skipped=0, disturbed_object=not success,
        contact_events=int(touched))


class PerfectPredictor:
    """A scorer that consults the oracle itself — the classifier's ceiling.

    Plug into `run_filtered` or a `Mode` in place of a forest model.
    """

    def __init__(self, gripper: GripperConfig | None = None):
        self.cfg = gripper or GripperConfig()

    def __call__(self, scene: EpisodeScene, candidate: GraspCandidate,
                 features) -> float:
        success, _, _ = _execute(scene, candidate.pose, self.cfg)
        return 1.0 if success else 0.0


def run_filtered(scene: EpisodeScene, candidates,
                 gripper: GripperConfig | None = None,
                 model=None, threshold: float = 0.6,
                 exhaustion: str = "execute_best_scored", *,
                 feature_cfg: FeatureConfig | None = None,
                 sensor_cfg: SensorConfig | None = None,
                 rng=None) -> PipelineOutcome:
    """Visit candidates contact-free and execute the first predicted success.

    Each visit moves to the candidate's open pose, captures both frames,
    featurizes and predicts; the latency entry times the featurize+predict
    cycle (capture stands in for sensor hardware and is not billed). If no
    candidate clears the threshold: `execute_best_scored` runs the one with
    the highest predicted probability, `abstain` ends the episode without
    any contact. `model` is a ForestModel, or any callable
    `(scene, candidate, features) -> probability`.
    """
    cfg = gripper or GripperConfig()
    feature_cfg = feature_cfg or FeatureConfig()
    sensor_cfg = sensor_cfg or SensorConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    candidates = _checked(candidates)
    if model is None:
        raise ValueError("filtered mode needs a model or scorer")
    if exhaustion not in EXHAUSTION_POLICIES:
        raise ValueError(f"exhaustion must be one of {EXHAUSTION_POLICIES}")

    predicted, probabilities, latencies = [], [], []
    chosen = None
    for i, candidate in enumerate(candidates):
        state = open_state(candidate.pose, cfg)
        left, right = capture_pair(state, scene.world, sensor_cfg, cfg, rng,
                                   timestamp=i * CYCLE_S)
        start = time.perf_counter()
        features = featurize_reading(state.joint_angles, left, right, feature_cfg)
        if isinstance(model, ForestModel):
            p = predict_proba(model, features)
        else:
            p = float(model(scene, candidate, features))
        latencies.append((time.perf_counter() - start) * 1e3)
        probabilities.append(p)
        predicted.append(p >= threshold)
        if predicted[-1]:
            chosen = i
            break

    if chosen is None and exhaustion == "execute_best_scored":
        chosen = int(np.argmax(probabilities))  # ties go to the best-ranked

    if chosen is None:
        success, reason, touched = False, "abstained", False
    else:
        success, reason, touched = _execute(scene, candidates[chosen].pose, cfg)
    return PipelineOutcome(
        executed_candidate_index=chosen,
        predicted=tuple(predicted), probabilities=tuple(probabilities),
        prediction_latencies_ms=tuple(latencies),
        actual=success, failure_reason=reason,
        candidates_skipped=sum(1 for j in range(len(predicted)) if j != chosen),
        disturbed_object=chosen is not None and not success,
        contact_events=int(touched))


# --- episodes --------------------------------------------------------------


@dataclass(frozen=True)
class Episode:
    episode_id: int
    scene: EpisodeScene
    candidates: tuple
    seed: int  # experiment seed; capture streams re-derive from it


def _planner_score(offset) -> float:
    """Closeness to the nominal grasp, jitter normalized by the grid steps
    (1 cm, 5 deg) so linear and angular error weigh comparably."""
    lin = math.sqrt(offset.x ** 2 + offset.y ** 2 + offset.z ** 2)
    ang = math.sqrt(offset.roll ** 2 + offset.pitch ** 2 + offset.yaw ** 2)
    return 1.0 / (1.0 + lin / 0.01 + ang / math.radians(5.0))


def synthesize_candidates(obj: ZooObject, n: int, rng, *,
                          ranges: PoseRanges | None = None,
                          gripper: GripperConfig | None = None) -> tuple:
    """Jittered samples around the oracle-nominal grasp, sorted by score.

    Stands in for an external planner; anything that produces a
    descending-sorted GraspCandidate list can replace it.
    """
    cfg = gripper or GripperConfig()
    if ranges is None:
        doc = dict(DEFAULT_RANGES)
        doc.update(obj.range_overrides)
        ranges = PoseRanges.from_dict(doc)
    object_pose = table_pose(obj)
    nominal = nominal_base_pose(obj, object_pose, cfg)
    pivot = grasp_point(obj, object_pose)
    cands = [GraspCandidate(apply_offset(off, nominal, pivot), _planner_score(off))
             for off in sample_poses(ranges, n, rng)]
    return tuple(sorted(cands, key=lambda c: -c.planner_score))


def make_episodes(objects, episodes: int, candidates_per_episode: int,
                  seed: int, *, gripper: GripperConfig | None = None) -> tuple:
    """Build a paired episode set: objects round-robin, candidates drawn
    from each object's own pose ranges on a per-episode stream."""
    objects = list(objects)
    if not objects:
        raise ValueError("need at least one object")
    out = []
    for i in range(episodes):
        obj = objects[i % len(objects)]
        rng = np.random.default_rng(
            [seed, _CANDIDATE_STREAM, object_key(obj.object_id), i])
        cands = synthesize_candidates(obj, candidates_per_episode, rng,
                                      gripper=gripper)
        out.append(Episode(i, episode_scene(obj), cands, seed))
    return tuple(out)


# --- paired comparison ------------------------------------------------------


@dataclass(frozen=True)
class Mode:
    """One controller configuration to replay the episodes under."""

    name: str
    kind: str  # "baseline" or "filtered"
    model: object = None
    threshold: float = 0.6
    exhaustion: str = "execute_best_scored"

    def __post_init__(self):
        if self.kind not in ("baseline", "filtered"):
            raise ValueError(f"unknown mode kind {self.kind!r}")
        if self.kind == "filtered" and self.model is None:
            raise ValueError("filtered mode needs a model")


@dataclass(frozen=True)
class ModeReport:
    name: str
    outcomes: tuple  # one PipelineOutcome per episode, episode order
    success_rate: float
    disturbance_count: int
    mean_contacts: float
    mean_candidates_visited: float
    mean_prediction_latency_ms: float  # 0.0 when the mode never predicts
    max_prediction_latency_ms: float


@dataclass(frozen=True)
class ComparisonReport:
    episodes: int
    modes: tuple

    def mode(self, name: str) -> ModeReport:
        for report in self.modes:
            if report.name == name:
                return report
        raise KeyError(name)

    def table(self) -> str:
        lines = ["mode,episodes,success_rate,disturbances,mean_contacts,"
                 "mean_candidates_visited,mean_prediction_latency_ms,"
                 "max_prediction_latency_ms"]
        for m in self.modes:
            lines.append(f"{m.name},{self.episodes},{m.success_rate!r},"
                         f"{m.disturbance_count},{m.mean_contacts!r},"
                         f"{m.mean_candidates_visited!r},"
                         f"{m.mean_prediction_latency_ms:.3f},"
                         f"{m.max_prediction_latency_ms:.3f}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        lines = [f"{self.episodes} paired episodes"]
        for m in self.modes:
            lines.append(
                f"{m.name}: {100.0 * m.success_rate:.1f}% success, "
                f"{m.disturbance_count} object disturbances, "
                f"{m.mean_contacts:.2f} mean contacts, "
                f"{m.mean_candidates_visited:.2f} mean candidates visited, "
                f"{m.mean_prediction_latency_ms:.2f} ms mean prediction cycle")
        return "\n".join(lines) + "\n"


def _run_episode(task):
    episode, mode, gripper_cfg, sensor_cfg, feature_cfg = task
    if mode.kind == "baseline":
        return run_baseline(episode.scene, episode.candidates, gripper_cfg)
    rng = np.random.default_rng(
        [episode.seed, _CAPTURE_STREAM,
         object_key(episode.scene.obj.object_id), episode.episode_id])
    return run_filtered(episode.scene, episode.candidates, gripper_cfg,
                        mode.model, mode.threshold, mode.exhaustion,
                        feature_cfg=feature_cfg, sensor_cfg=sensor_cfg, rng=rng)


def _summarize(mode: Mode, outcomes: tuple, episodes: int) -> ModeReport:
    latencies = [ms for o in outcomes for ms in o.prediction_latencies_ms]
    return ModeReport(
        name=mode.name, outcomes=outcomes,
        success_rate=sum(o.actual for o in outcomes) / episodes,
        disturbance_count=sum(o.disturbed_object for o in outcomes),
        mean_contacts=sum(o.contact_events for o in outcomes) / episodes,
        mean_candidates_visited=(
            sum(o.candidates_visited for o in outcomes) / episodes),
        mean_prediction_latency_ms=(
            sum(latencies) / len(latencies) if latencies else 0.0),
        max_prediction_latency_ms=max(latencies, default=0.0))


def compare(episodes, modes, *, gripper: GripperConfig | None = None,
            sensor_cfg: SensorConfig | None = None,
            feature_cfg: FeatureConfig | None = None,
            processes: int | None = None) -> ComparisonReport:
    """Replay the same episodes under every mode and report paired stats.

    Episodes run in parallel when `processes` > 1 (each episode stays
    internally sequential); mode names must be unique so the report can be
    addressed by name.
    """
    episodes = tuple(episodes)
    modes = tuple(modes)
    if not episodes:
        raise ValueError("need at least one episode")
    names = [m.name for m in modes]
    if len(set(names)) != len(names):
        raise ValueError("mode names must be unique")
    gripper_cfg = gripper or GripperConfig()
    sensor_cfg = sensor_cfg or SensorConfig()
    feature_cfg = feature_cfg or FeatureConfig()
    reports = []
    for mode in modes:
        tasks = [(ep, mode, gripper_cfg, sensor_cfg, feature_cfg)
                 for ep in episodes]
        if processes and processes > 1:
            with ProcessPoolExecutor(max_workers=processes) as pool:
                outcomes = tuple(pool.map(_run_episode, tasks))
        else:
            outcomes = tuple(_run_episode(t) for t in tasks)
        reports.append(_summarize(mode, outcomes, len(episodes)))
    return ComparisonReport(len(episodes), tuple(reports))


def feasible_fraction(episodes, gripper: GripperConfig | None = None) -> float:
    """Fraction of episodes with at least one oracle-feasible candidate —
    the success rate a perfect predictor turns into."""
    cfg = gripper or GripperConfig()
    episodes = tuple(episodes)
    hits = sum(
        any(_execute(ep.scene, c.pose, cfg)[0] for c in ep.candidates)
        for ep in episodes)
    return hits / len(episodes)
