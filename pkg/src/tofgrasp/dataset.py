"""Trial generation, balancing, splitting, and persistence.

A trial places the gripper at a sampled offset from the nominal grasp pose,
captures both sensor frames at the open pose, then closes the fingers and
asks the oracle for the ground-truth label. Everything is deterministic
given the generator seed: each trial draws from its own rng stream keyed by
(seed, object, index), so results do not depend on scheduling order.

On disk a trial set is a single NDJSON file: the first line holds the
manifest (roster, counts, ranges, seed, config hashes — enough to regenerate
the data), each following line one trial.
"""

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, compose, rotate_about
from .gripper import (
    GripperConfig,
    GripperState,
    close_fingers,
    forward_kinematics,
    gripper_config_to_dict,
    label_grasp,
    open_state,
    pad_sample_points,
)
from .scene import signed_distance
from .tof import SensorConfig, capture_frame
from .wire import (
    content_hash,
    dump_record,
    sensor_config_to_dict,
    trial_from_dict,
    trial_to_dict,
)
from .zoo import grasp_point, nominal_base_pose, table_pose, trial_scene

ROLES = ("train", "validation", "test")

# sub-stream tags so pose sampling and trial noise never share a stream
_POSE_STREAM = 1
_TRIAL_STREAM = 2


def object_key(object_id: str) -> int:
    return zlib.crc32(object_id.encode())


@dataclass(frozen=True)
class PoseRanges:
    """Discrete sampling grid for gripper pose offsets.

    Linear axes in meters, angles in radians; `yaw` is an explicit value
    set while the other axes are (min, max) intervals discretized at the
    step. Defaults: +/-2 cm, roll +/-35 deg, pitch -35..0 deg, yaw
    {0, 15, 30, 45} deg, steps 1 cm / 5 deg.
    """

    x: tuple = (-0.02, 0.02)
    y: tuple = (-0.02, 0.02)
    z: tuple = (-0.02, 0.02)
    roll: tuple = (math.radians(-35.0), math.radians(35.0))
    pitch: tuple = (math.radians(-35.0), 0.0)
    yaw: tuple = tuple(math.radians(v) for v in (0.0, 15.0, 30.0, 45.0))
    step_lin: float = 0.01
    step_ang: float = math.radians(5.0)

    def __post_init__(self):
        for name in ("x", "y", "z", "roll", "pitch"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min must not exceed max")
        if not self.yaw:
            raise ValueError("yaw set must be non-empty")
        if self.step_lin <= 0 or self.step_ang <= 0:
            raise ValueError("steps must be positive")

    @staticmethod
    def _interval_values(lo: float, hi: float, step: float) -> np.ndarray:
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return lo + step * np.arange(count)

    def axis_values(self) -> tuple:
        iv = self._interval_values
        return (iv(*self.x, self.step_lin),
                iv(*self.y, self.step_lin),
                iv(*self.z, self.step_lin),
                iv(*self.roll, self.step_ang),
                iv(*self.pitch, self.step_ang),
                np.asarray(self.yaw, dtype=float))

    def cardinality(self) -> int:
        return int(np.prod([len(a) for a in self.axis_values()]))

    @staticmethod
    def from_dict(doc: dict) -> "PoseRanges":
        """Build from the cm/deg schema used in zoo and preset files."""
        known = {"x_cm", "y_cm", "z_cm", "roll_deg", "pitch_deg", "yaw_deg",
                 "step_cm", "step_deg"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown range keys: {sorted(unknown)}")
        kw = {}
        for axis in ("x", "y", "z"):
            if f"{axis}_cm" in doc:
                lo, hi = doc[f"{axis}_cm"]
                kw[axis] = (float(lo) / 100.0, float(hi) / 100.0)
        for axis in ("roll", "pitch"):
            if f"{axis}_deg" in doc:
                lo, hi = doc[f"{axis}_deg"]
                kw[axis] = (math.radians(float(lo)), math.radians(float(hi)))
        if "yaw_deg" in doc:
            kw["yaw"] = tuple(math.radians(float(v)) for v in doc["yaw_deg"])
        if "step_cm" in doc:
            kw["step_lin"] = float(doc["step_cm"]) / 100.0
        if "step_deg" in doc:
            kw["step_ang"] = math.radians(float(doc["step_deg"]))
        return PoseRanges(**kw)

    def to_dict(self) -> dict:
        return {"x_m": list(self.x), "y_m": list(self.y), "z_m": list(self.z),
                "roll_rad": list(self.roll), "pitch_rad": list(self.pitch),
                "yaw_rad": list(self.yaw),
                "step_m": self.step_lin, "step_rad": self.step_ang}


@dataclass(frozen=True)
class PoseOffset:
    """One sampled 6-dof offset from the nominal grasp pose."""

    x: float
    y: float
    z: float
    roll: float
    pitch: float
    yaw: float


def sample_poses(ranges: PoseRanges, n: int, rng) -> list:
    """Draw `n` offsets uniformly without replacement from the discrete grid."""
    if n < 1:
        raise ValueError("n must be >= 1")
    axes = ranges.axis_values()
    sizes = [len(a) for a in axes]
    cardinality = int(np.prod(sizes))
    if n > cardinality:
        raise ValueError(f"n={n} exceeds grid cardinality {cardinality}")
    flat = rng.choice(cardinality, size=n, replace=False)
    coords = np.unravel_index(flat, sizes)
    return [PoseOffset(x=float(axes[0][i]), y=float(axes[1][j]), z=float(axes[2][k]),
                       roll=float(axes[3][r]), pitch=float(axes[4][p]),
                       yaw=float(axes[5][w]))
            for i, j, k, r, p, w in zip(*coords)]


def apply_offset(offset: PoseOffset, nominal_base: Pose, pivot) -> Pose:
    """World base pose for an offset: rotate about the grasp point, then
    translate. The pitch sign is flipped so the sampled range [-35 deg, 0]
    tilts the approach downward toward the table rather than up."""
    rotated = rotate_about(pivot, offset.roll, -offset.pitch, offset.yaw, nominal_base)
    return Pose(rotated.translation + np.array([offset.x, offset.y, offset.z]),
                rotated.rotation)


@dataclass(frozen=True, eq=False)
class GraspTrial:
    trial_id: str
    object_id: str
    base_pose: Pose  # relative to the object's nominal grasp pose
    joint_angles: np.ndarray  # at frame capture (open pose)
    final_joint_angles: np.ndarray  # after the close attempt
    frame_left: object
    frame_right: object
    label: bool
    failure_reason: str
    second: tuple | None = None  # (joint_angles, frame_left, frame_right)

    def __post_init__(self):
        if self.label != (self.failure_reason == "none"):
            raise ValueError("label must be consistent with failure_reason")
        if self.frame_left.sensor_id != "left" or self.frame_right.sensor_id != "right":
            raise ValueError("frames must carry their sensor ids")


@dataclass(frozen=True)
class TrialSet:
    trials: tuple
    manifest: dict

    def __post_init__(self):
        roster = self.manifest["roster"]
        seen = set()
        for role in ROLES:
            ids = set(roster.get(role, ()))
            if ids & seen:
                raise ValueError(f"roster roles overlap: {sorted(ids & seen)}")
            seen |= ids
        for t in self.trials:
            if t.object_id not in seen:
                raise ValueError(f"trial object {t.object_id!r} missing from roster")

    def role_of(self, object_id: str) -> str:
        for role in ROLES:
            if object_id in self.manifest["roster"].get(role, ()):
                return role
        raise KeyError(object_id)

    def subset(self, role: str) -> "TrialSet":
        ids = set(self.manifest["roster"].get(role, ()))
        kept = tuple(t for t in self.trials if t.object_id in ids)
        return TrialSet(kept, {**self.manifest, "subset_role": role})

    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.trials], dtype=bool)


def approach_collides(state: GripperState, obj, object_pose: Pose,
                       cfg: GripperConfig) -> bool:
    pads = pad_sample_points(state, cfg)
    return bool(signed_distance(obj.shape, object_pose, pads).min() <= 0.0)


def capture_pair(state, scene, sensor_cfg, cfg, rng, timestamp):
    fk = forward_kinematics(state, cfg)
    left = capture_frame(fk.sensor_left, scene, sensor_cfg, rng,
                         sensor_id="left", timestamp=timestamp)
    right = capture_frame(fk.sensor_right, scene, sensor_cfg, rng,
                          sensor_id="right", timestamp=timestamp)
    return left, right


def _run_trial(obj, offset: PoseOffset, index: int, seed: int,
               sensor_cfg: SensorConfig, cfg: GripperConfig,
               two_readings: bool) -> GraspTrial:
    rng = np.random.default_rng([seed, _TRIAL_STREAM, object_key(obj.object_id), index])
    object_pose = table_pose(obj)
    nominal = nominal_base_pose(obj, object_pose, cfg)
    pivot = grasp_point(obj, object_pose)
    world_base = apply_offset(offset, nominal, pivot)
    relative = compose(nominal.inverse(), world_base)
    scene = trial_scene(obj, object_pose)
    state = open_state(world_base, cfg)

    frame_left, frame_right = capture_pair(state, scene, sensor_cfg, cfg, rng, 0.0)

    # An approach that starts inside the object would have knocked it away on
    # a real rig; the fingers then close on nothing. The frames still carry
    # the (very near) pre-impact view.
    if approach_collides(state, obj, object_pose, cfg):
        second = None
        if two_readings:
            left2, right2 = capture_pair(state, scene, sensor_cfg, cfg, rng, 0.5)
            second = (np.array(state.joint_angles), left2, right2)
        return GraspTrial(
            trial_id=f"{obj.object_id}-{index:05d}", object_id=obj.object_id,
            base_pose=relative, joint_angles=np.array(state.joint_angles),
            final_joint_angles=np.array(state.joint_angles),
            frame_left=frame_left, frame_right=frame_right,
            label=False, failure_reason="no_contact", second=second)

    second = None
    if two_readings:
        partial = close_fingers(state, scene, cfg, max_travel=cfg.close_rate * 0.5)
        pstate = GripperState(world_base, partial.final_joint_angles)
        left2, right2 = capture_pair(pstate, scene, sensor_cfg, cfg, rng, 0.5)
        second = (np.array(partial.final_joint_angles), left2, right2)

    outcome = close_fingers(state, scene, cfg)
    success, reason = label_grasp(outcome, obj.shape, object_pose, cfg)
    return GraspTrial(
        trial_id=f"{obj.object_id}-{index:05d}", object_id=obj.object_id,
        base_pose=relative, joint_angles=np.array(state.joint_angles),
        final_joint_angles=np.array(outcome.final_joint_angles),
        frame_left=frame_left, frame_right=frame_right,
        label=success, failure_reason=reason, second=second)


def generate_trials(objects, counts: dict, ranges: dict, seed: int, *,
                    sensor_cfg: SensorConfig | None = None,
                    gripper_cfg: GripperConfig | None = None,
                    two_readings: bool = False) -> TrialSet:
    """Generate labeled trials for `objects` (ZooObject list).

    `counts` and `ranges` map object id to trial count and PoseRanges.
    """
    sensor_cfg = sensor_cfg or SensorConfig()
    gripper_cfg = gripper_cfg or GripperConfig()
    trials = []
    roster = {role: [] for role in ROLES}
    for obj in objects:
        roster[obj.role].append(obj.object_id)
        n = int(counts[obj.object_id])
        if n < 1:
            raise ValueError(f"{obj.object_id}: count must be >= 1")
        pr = ranges[obj.object_id]
        pose_rng = np.random.default_rng(
            [seed, _POSE_STREAM, object_key(obj.object_id)])
        for index, offset in enumerate(sample_poses(pr, n, pose_rng)):
            trials.append(_run_trial(obj, offset, index, seed,
                                     sensor_cfg, gripper_cfg, two_readings))
    ranges_doc = {oid: ranges[oid].to_dict() for oid in sorted(counts)}
    manifest = {
        "seed": int(seed),
        "roster": {role: sorted(ids) for role, ids in roster.items()},
        "counts": {oid: int(counts[oid]) for oid in sorted(counts)},
        "ranges": ranges_doc,
        "two_readings": bool(two_readings),
        "sensor_config": sensor_config_to_dict(sensor_cfg),
        "gripper_config": gripper_config_to_dict(gripper_cfg),
        "hashes": {
            "sensor": content_hash(sensor_config_to_dict(sensor_cfg)),
            "gripper": content_hash(gripper_config_to_dict(gripper_cfg)),
            "ranges": content_hash(ranges_doc),
        },
    }
    return TrialSet(tuple(trials), manifest)


def generate_from_preset(preset, *, two_readings: bool = False,
                         sensor_cfg: SensorConfig | None = None,
                         gripper_cfg: GripperConfig | None = None) -> TrialSet:
    counts = {o.object_id: preset.count_for(o) for o in preset.objects}
    ranges = {o.object_id: PoseRanges.from_dict(preset.ranges_for(o))
              for o in preset.objects}
    return generate_trials(preset.objects, counts, ranges, preset.seed,
                           sensor_cfg=sensor_cfg, gripper_cfg=gripper_cfg,
                           two_readings=two_readings)


def rebalance(ts: TrialSet, rng) -> TrialSet:
    """Randomly drop majority-class trials until each object is split 50/50.

    Objects with only one label class cannot be balanced; they are removed
    entirely and listed in the manifest's rebalance report.
    """
    by_object: dict = {}
    for i, t in enumerate(ts.trials):
        by_object.setdefault(t.object_id, []).append(i)
    keep = set(range(len(ts.trials)))
    report = {"excluded_objects": [], "removed": 0, "per_object": {}}
    for object_id in sorted(by_object):
        idxs = by_object[object_id]
        succ = [i for i in idxs if ts.trials[i].label]
        fail = [i for i in idxs if not ts.trials[i].label]
        if not succ or not fail:
            report["excluded_objects"].append(object_id)
            report["removed"] += len(idxs)
            keep -= set(idxs)
            continue
        k = min(len(succ), len(fail))
        for pool in (succ, fail):
            excess = len(pool) - k
            if excess:
                drop = rng.choice(len(pool), size=excess, replace=False)
                keep -= {pool[int(j)] for j in drop}
                report["removed"] += excess
        report["per_object"][object_id] = {"kept": 2 * k}
    trials = tuple(t for i, t in enumerate(ts.trials) if i in keep)
    return TrialSet(trials, {**ts.manifest, "rebalance": report})


def split(ts: TrialSet, ratio: float, rng) -> tuple:
    """Stratified 80/20-style split of the train-role trials by (object, label).

    Validation/test-role objects never pass through here — they are whole-set
    holdouts selected by manifest role (use `subset`).
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    train_ids = set(ts.manifest["roster"].get("train", ()))
    cells: dict = {}
    for i, t in enumerate(ts.trials):
        if t.object_id in train_ids:
            cells.setdefault((t.object_id, t.label), []).append(i)
    picked = set()
    for key in sorted(cells):
        idxs = cells[key]
        k = int(round(ratio * len(idxs)))
        perm = rng.permutation(len(idxs))
        picked |= {idxs[int(p)] for p in perm[:k]}
    part_a = tuple(t for i, t in enumerate(ts.trials)
                   if i in picked and t.object_id in train_ids)
    part_b = tuple(t for i, t in enumerate(ts.trials)
                   if i not in picked and t.object_id in train_ids)
    return (TrialSet(part_a, {**ts.manifest, "split": {"part": "train", "ratio": ratio}}),
            TrialSet(part_b, {**ts.manifest, "split": {"part": "seen_validation",
                                                       "ratio": ratio}}))


def save_trials(ts: TrialSet, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_record({"manifest": ts.manifest}) + "\n")
        for t in ts.trials:
            fh.write(dump_record(trial_to_dict(t)) + "\n")


def load_trials(path) -> TrialSet:
    import json

    with open(path) as fh:
        header = json.loads(fh.readline())
        trials = tuple(trial_from_dict(json.loads(line))
                       for line in fh if line.strip())
    # TrialSet.__post_init__ re-asserts the disjoint-roster invariant
    return TrialSet(trials, header["manifest"])
