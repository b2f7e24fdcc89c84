"""Cleaning and reduction of raw frames into fixed-layout feature vectors.

Only the first target of each zone survives; its distance is capped (default
12.5 cm) so far-away background never influences the classifier, and invalid
zones encode as "nothing within the workspace": distance at the cap with
zero signal. The layout is frozen: 4 joint angles, then for each sensor
(left, right) 64 zones in row-major order with 8 fields per zone.
"""

from dataclasses import dataclass

import numpy as np

from .tof import N_ZONES, SPAD_COUNT
from .wire import content_hash

ZONE_FIELDS = ("distance_m", "std_dev_m", "reflectance", "signal",
               "num_targets", "spad_count", "quality_flag", "ambient")
LAYOUT_VERSION = 1

MODES = ("single_reading", "two_readings")
JOINT_SOURCES = ("pre_close", "post_close")


@dataclass(frozen=True)
class FeatureConfig:
    cap: float = 0.125
    mode: str = "single_reading"
    joint_source: str = "pre_close"

    def __post_init__(self):
        if self.cap <= 0:
            raise ValueError("cap must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.joint_source not in JOINT_SOURCES:
            raise ValueError(f"joint_source must be one of {JOINT_SOURCES}")

    def width(self) -> int:
        per_pair = 4 + 2 * N_ZONES * len(ZONE_FIELDS)
        return per_pair if self.mode == "single_reading" else 2 * per_pair


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: str  # layout_id of the config that produced it

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ValueError("values must be a flat vector")


def reduce_frame(raw, cap: float = 0.125) -> tuple:
    """Clean one frame into a (64, 8) table; also count dropped scalars.

    Dropped scalars are the five per-target readings of every target beyond
    the first — the data the reduction throws away.
    """
    if len(raw.zones) != N_ZONES:
        raise ValueError(f"expected {N_ZONES} zones, got {len(raw.zones)}")
    table = np.empty((N_ZONES, len(ZONE_FIELDS)))
    dropped = 0
    for i, zone in enumerate(raw.zones):
        if zone.num_targets:
            t = zone.targets[0]
            row = (min(t.distance_m, cap), t.std_dev_m, t.reflectance,
                   t.signal, zone.num_targets, zone.spad_count, 1.0,
                   zone.ambient)
            dropped += 5 * (zone.num_targets - 1)
        else:
            row = (cap, 0.0, 0.0, 0.0, 0.0, zone.spad_count, 0.0, zone.ambient)
        table[i] = row
    return table, dropped


def feature_names(cfg: FeatureConfig = FeatureConfig()) -> tuple:
    def pair(prefix):
        names = [f"{prefix}joint_{i}" for i in range(4)]
        for sensor in ("left", "right"):
            for zone in range(N_ZONES):
                for field in ZONE_FIELDS:
                    names.append(f"{prefix}{sensor}_z{zone:02d}_{field}")
        return names

    names = pair("")
    if cfg.mode == "two_readings":
        names += pair("second_")
    return tuple(names)


def layout_id(cfg: FeatureConfig = FeatureConfig()) -> str:
    doc = {"version": LAYOUT_VERSION, "mode": cfg.mode,
           "joint_source": cfg.joint_source, "cap": cfg.cap,
           "names": list(feature_names(cfg))}
    return content_hash(doc)[:16]


def _angles(trial, cfg: FeatureConfig) -> np.ndarray:
    if cfg.joint_source == "pre_close":
        return np.asarray(trial.joint_angles, dtype=float)
    return np.asarray(trial.final_joint_angles, dtype=float)


def featurize(trial, cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    parts = [_angles(trial, cfg),
             reduce_frame(trial.frame_left, cfg.cap)[0].ravel(),
             reduce_frame(trial.frame_right, cfg.cap)[0].ravel()]
    if cfg.mode == "two_readings":
        if trial.second is None:
            raise ValueError("two_readings mode requires second frames")
        angles2, left2, right2 = trial.second
        parts += [np.asarray(angles2, dtype=float),
                  reduce_frame(left2, cfg.cap)[0].ravel(),
                  reduce_frame(right2, cfg.cap)[0].ravel()]
    values = np.concatenate(parts)
    assert values.shape == (cfg.width(),)
    return FeatureVector(values, layout_id(cfg))


def featurize_reading(joint_angles, frame_left, frame_right,
                      cfg: FeatureConfig = FeatureConfig()) -> FeatureVector:
    """Featurize one live reading — joint angles plus a frame pair.

    This is the path the pipeline and the classification service use:
    at prediction time there is no trial record yet, only the sensors'
    current view. Two-reading layouts need a recorded close attempt and
    are rejected here.
    """
    if cfg.mode != "single_reading":
        raise ValueError("a live reading is a single capture; "
                         f"mode {cfg.mode!r} needs a recorded trial")
    values = np.concatenate([
        np.asarray(joint_angles, dtype=float),
        reduce_frame(frame_left, cfg.cap)[0].ravel(),
        reduce_frame(frame_right, cfg.cap)[0].ravel()])
    if values.shape != (cfg.width(),):
        raise ValueError(f"expected {cfg.width()} values, got {values.shape[0]}")
    return FeatureVector(values, layout_id(cfg))


def featurize_set(trials, cfg: FeatureConfig = FeatureConfig()) -> tuple:
    """Stack a trial collection into (X, y) arrays."""
    X = np.empty((len(trials), cfg.width()))
    y = np.empty(len(trials), dtype=bool)
    for i, t in enumerate(trials):
        X[i] = featurize(t, cfg).values
        y[i] = t.label
    return X, y


def export_csv(path, X: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> None:
    """Delimited text export: header row with all column names, repr floats."""
    names = feature_names(cfg)
    if X.shape[1] != len(names):
        raise ValueError(f"matrix width {X.shape[1]} != layout width {len(names)}")
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
