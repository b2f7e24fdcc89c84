"""Object zoo and experiment presets.

Objects live in a multi-document YAML file, one document per object, with
dimensions in centimeters and masses in grams. Each object's frame has its
origin at the bottom center (resting on the table at z = 0); `grasp_height`
is where the nominal grasp line crosses, and `grasp_yaw` spins the object so
its intended face meets the pads. Named household items are geometric
stand-ins built from the primitive set, not faithful models.

A preset bundles the zoo with per-role trial counts, the pose-sampling
ranges, the generator seed, and the hyperparameter grid, so one file pins
down an entire experiment.
"""

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .geometry import Pose, transform_point
from .gripper import GripperConfig
from .scene import Scene, Shape

ROLES = ("train", "validation", "test")

DEFAULT_GRID = {
    "n_trees": [20, 60, 120],
    "min_samples_split": [2, 5, 10],
    "max_depth": [8, 16, None],
}

# gripper pose offsets sampled per trial (continuous axes are discretized)
DEFAULT_RANGES = {
    "x_cm": [-2.0, 2.0],
    "y_cm": [-2.0, 2.0],
    "z_cm": [-2.0, 2.0],
    "roll_deg": [-35.0, 35.0],
    "pitch_deg": [-35.0, 0.0],
    "yaw_deg": [0.0, 15.0, 30.0, 45.0],
    "step_cm": 1.0,
    "step_deg": 5.0,
}


@dataclass(frozen=True)
class ZooObject:
    object_id: str
    role: str
    base: bool
    shape: Shape
    grasp_height: float
    grasp_yaw: float
    range_overrides: dict

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"{self.object_id}: unknown role {self.role!r}")
        if self.grasp_height <= 0:
            raise ValueError(f"{self.object_id}: grasp_height must be positive")


def _build_part(part: dict, default_reflectance: float) -> tuple[Shape, Pose]:
    kind = part["kind"]
    reflectance = float(part.get("reflectance", default_reflectance))
    if kind == "box":
        hx, hy, hz = (float(v) / 100.0 for v in part["half_extents_cm"])
        prim = Shape.box((hx, hy, hz), reflectance=reflectance)
    elif kind == "cylinder":
        prim = Shape.cylinder(float(part["radius_cm"]) / 100.0,
                              float(part["half_height_cm"]) / 100.0,
                              reflectance=reflectance)
    elif kind == "sphere":
        prim = Shape.sphere(float(part["radius_cm"]) / 100.0, reflectance=reflectance)
    else:
        raise ValueError(f"unknown part kind {kind!r}")
    at = [float(v) / 100.0 for v in part.get("at_cm", (0.0, 0.0, 0.0))]
    rpy = [math.radians(float(v)) for v in part.get("rpy_deg", (0.0, 0.0, 0.0))]
    return prim, Pose.from_rpy(at, *rpy)


def object_from_dict(doc: dict) -> ZooObject:
    reflectance = float(doc.get("reflectance", 0.8))
    parts = [_build_part(p, reflectance) for p in doc["shape"]]
    mass = float(doc["mass_g"]) / 1000.0
    shape = Shape.composite(parts, reflectance=reflectance, mass_kg=mass)
    return ZooObject(
        object_id=str(doc["id"]),
        role=str(doc["role"]),
        base=bool(doc.get("base", False)),
        shape=shape,
        grasp_height=float(doc["grasp_height_cm"]) / 100.0,
        grasp_yaw=math.radians(float(doc.get("grasp_yaw_deg", 0.0))),
        range_overrides=dict(doc.get("ranges", {})),
    )


def parse_zoo(text: str) -> tuple[ZooObject, ...]:
    objects = tuple(object_from_dict(doc) for doc in yaml.safe_load_all(text) if doc)
    ids = [o.object_id for o in objects]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate object ids in zoo")
    return objects


def load_zoo(path) -> tuple[ZooObject, ...]:
    with open(path) as fh:
        return parse_zoo(fh.read())


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    objects: tuple
    counts: dict  # {"base": int, "other": int, "unseen": int}
    ranges: dict  # global pose-range defaults (DEFAULT_RANGES schema)
    seed: int
    grid: dict

    def __post_init__(self):
        for key in ("base", "other", "unseen"):
            if int(self.counts.get(key, 0)) < 1:
                raise ValueError(f"preset {self.name}: count {key!r} must be >= 1")
        roster = {}
        for obj in self.objects:
            roster.setdefault(obj.role, set()).add(obj.object_id)
        for role in ROLES:
            if not roster.get(role):
                raise ValueError(f"preset {self.name}: no {role} objects")
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError(f"preset {self.name}: roster roles overlap")

    def objects_by_role(self, role: str) -> tuple:
        return tuple(o for o in self.objects if o.role == role)

    def count_for(self, obj: ZooObject) -> int:
        if obj.role != "train":
            return int(self.counts["unseen"])
        return int(self.counts["base"] if obj.base else self.counts["other"])

    def ranges_for(self, obj: ZooObject) -> dict:
        merged = dict(DEFAULT_RANGES)
        merged.update(self.ranges)
        merged.update(obj.range_overrides)
        return merged


def _presets_root():
    return resources.files("tofgrasp") / "presets"


def preset_from_dict(doc: dict, zoo_objects) -> ExperimentPreset:
    return ExperimentPreset(
        name=str(doc["name"]),
        objects=tuple(zoo_objects),
        counts={k: int(v) for k, v in doc["counts"].items()},
        ranges=dict(doc.get("ranges", {})),
        seed=int(doc["seed"]),
        grid={k: list(v) for k, v in doc.get("grid", DEFAULT_GRID).items()},
    )


def load_preset(name) -> ExperimentPreset:
    """Load a shipped preset by name, or any preset file by path."""
    import os

    if os.path.exists(str(name)):
        with open(name) as fh:
            doc = yaml.safe_load(fh)
        zoo_text = open(os.path.join(os.path.dirname(str(name)), doc["zoo"])).read() \
            if "zoo" in doc else (_presets_root() / "zoo.yaml").read_text()
    else:
        entry = _presets_root() / f"{name}.yaml"
        try:
            text = entry.read_text()
        except FileNotFoundError:
            raise ValueError(f"unknown preset {name!r}") from None
        doc = yaml.safe_load(text)
        zoo_text = (_presets_root() / doc.get("zoo", "zoo.yaml")).read_text()
    return preset_from_dict(doc, parse_zoo(zoo_text))


# --- nominal grasp geometry --------------------------------------------------

def nominal_reach(cfg: GripperConfig) -> float:
    """Distance from the gripper base to the pad centers at the open pose."""
    return cfg.proximal_len * math.cos(cfg.open_angle) + cfg.distal_len / 2.0


def table_pose(obj: ZooObject) -> Pose:
    """The object resting on the table at the origin, spun to its grasp yaw."""
    return Pose.from_rpy([0.0, 0.0, 0.0], yaw=obj.grasp_yaw)


def grasp_point(obj: ZooObject, object_pose: Pose) -> np.ndarray:
    return transform_point(object_pose, [0.0, 0.0, obj.grasp_height])


def nominal_base_pose(obj: ZooObject, object_pose: Pose, cfg: GripperConfig) -> Pose:
    """Gripper base placed so the pad centers straddle the grasp point,
    approaching along +x with the closing axis along world y."""
    gp = grasp_point(obj, object_pose)
    return Pose(gp - np.array([nominal_reach(cfg), 0.0, 0.0]))


def trial_scene(obj: ZooObject, object_pose: Pose, ambient: float = 0.05) -> Scene:
    return Scene(objects=((obj.object_id, obj.shape, object_pose),),
                 support_plane=0.0, ambient=ambient)
