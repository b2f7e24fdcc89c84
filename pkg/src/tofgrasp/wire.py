"""Serialization of frames and trials to line-delimited JSON.

Numbers are written with Python's shortest round-trip repr, so a write/read
cycle reproduces every float bit-exactly. Record keys are sorted and the
separators fixed, which makes serialized records canonical: the same data
always produces the same bytes, and content hashes are stable.
"""

import dataclasses
import hashlib
import json

import numpy as np

from .geometry import Pose
from .tof import RawSensorFrame, TargetReading, ZoneReading


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_hash(obj) -> str:
    """sha256 over the canonical JSON encoding."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def sensor_config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


# --- frames -------------------------------------------------------------------

def frame_to_dict(frame: RawSensorFrame) -> dict:
    zones = []
    for z in frame.zones:
        zones.append({
            "targets": [
                {"distance_m": t.distance_m, "std_dev_m": t.std_dev_m,
                 "reflectance": t.reflectance, "signal": t.signal,
                 "status": t.status}
                for t in z.targets
            ],
            "num_targets": z.num_targets,
            "spad_count": z.spad_count,
            "quality": z.quality,
            "ambient": z.ambient,
        })
    return {"sensor_id": frame.sensor_id, "timestamp_s": frame.timestamp,
            "zones": zones}


def frame_from_dict(doc: dict) -> RawSensorFrame:
    zones = []
    for z in doc["zones"]:
        targets = tuple(
            TargetReading(distance_m=float(t["distance_m"]),
                          std_dev_m=float(t["std_dev_m"]),
                          reflectance=float(t["reflectance"]),
                          signal=float(t["signal"]),
                          status=int(t.get("status", 0)))
            for t in z["targets"])
        zones.append(ZoneReading(targets=targets,
                                 num_targets=int(z["num_targets"]),
                                 spad_count=int(z["spad_count"]),
                                 quality=str(z["quality"]),
                                 ambient=float(z["ambient"])))
    return RawSensorFrame(sensor_id=str(doc["sensor_id"]), zones=tuple(zones),
                          timestamp=float(doc.get("timestamp_s", 0.0)))


# --- poses --------------------------------------------------------------------

def pose_to_dict(pose: Pose) -> dict:
    return {"translation": [float(v) for v in pose.translation],
            "rotation_wxyz": [float(v) for v in pose.rotation]}


def pose_from_dict(doc: dict) -> Pose:
    return Pose(np.array(doc["translation"], dtype=float),
                np.array(doc["rotation_wxyz"], dtype=float))


# --- trials ---------------------------------------------------------------

def trial_to_dict(trial) -> dict:
    doc = {
        "trial_id": trial.trial_id,
        "object_id": trial.object_id,
        "base_pose": pose_to_dict(trial.base_pose),
        "joint_angles": [float(v) for v in trial.joint_angles],
        "final_joint_angles": [float(v) for v in trial.final_joint_angles],
        "frame_left": frame_to_dict(trial.frame_left),
        "frame_right": frame_to_dict(trial.frame_right),
        "label": bool(trial.label),
        "failure_reason": trial.failure_reason,
        "second": None,
    }
    if trial.second is not None:
        angles, left, right = trial.second
        doc["second"] = {"joint_angles": [float(v) for v in angles],
                         "frame_left": frame_to_dict(left),
                         "frame_right": frame_to_dict(right)}
    return doc


def trial_from_dict(doc: dict):
    from .dataset import GraspTrial

    second = None
    if doc.get("second") is not None:
        s = doc["second"]
        second = (np.array(s["joint_angles"], dtype=float),
                  frame_from_dict(s["frame_left"]),
                  frame_from_dict(s["frame_right"]))
    return GraspTrial(
        trial_id=str(doc["trial_id"]),
        object_id=str(doc["object_id"]),
        base_pose=pose_from_dict(doc["base_pose"]),
        joint_angles=np.array(doc["joint_angles"], dtype=float),
        final_joint_angles=np.array(doc["final_joint_angles"], dtype=float),
        frame_left=frame_from_dict(doc["frame_left"]),
        frame_right=frame_from_dict(doc["frame_right"]),
        second=second,
        label=bool(doc["label"]),
        failure_reason=str(doc["failure_reason"]),
    )


def dump_record(doc: dict) -> str:
    """One canonical NDJSON line (no trailing newline)."""
    return canonical_json(doc)
