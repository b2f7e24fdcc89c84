"""Two-finger gripper: kinematics, closing controller, grasp-success oracle.

Each finger is a planar two-link chain; the two chains hang off the palm
mirrored about the xz-plane, so the palm axis +x points out of the hand
and the fingers close along y. A parallel-jaw mimic drives every distal
joint to the negative of its proximal joint, keeping the silicone pads
parallel while they close. The ranging sensors sit on the pads, optical
axis along the pad normal, looking into the grasp region.

The grasp oracle (`label_grasp`) is a synthetic stand-in for physical
trial outcomes. All of its constants — friction cone from `friction_mu`,
torque tolerance `torque_delta_factor`, load safety `load_safety`, the
lift the grasp must survive — live in `GripperConfig` so a dataset's
labeling rules are fully captured by one config block.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import yaml

from .geometry import Pose, compose, quat_from_axis_angle, transform_point
from .scene import Scene, Shape, sdf_normal, signed_distance

GRAVITY = 9.80665

FAILURE_REASONS = ("none", "no_contact", "single_finger", "friction_cone",
                   "torque_slip", "lift_slip")

# pad sampling densities: coarse grid for the closing sweep, dense grid for
# locating the contact patch once a step has touched (dense is a superset of
# coarse: 9 -> 33 and 5 -> 13 keep the coarse points on the dense lattice)
_SWEEP_GRID = (9, 5)
_PATCH_GRID = (33, 13)
_PATCH_TIE_TOL = 1e-9


@dataclass(frozen=True)
class GripperConfig:
    proximal_len: float = 0.06
    distal_len: float = 0.05
    palm_width: float = 0.08
    finger_thickness: float = 0.01
    pad_thickness: float = 0.005
    pad_width: float = 0.02
    open_angle: float = math.radians(-15.0)
    joint_limit: float = math.radians(40.0)
    close_step: float = math.radians(0.5)
    close_rate: float = math.radians(30.0)
    sensor_along: float = 0.5
    friction_mu: float = 0.8
    grip_force: float = 8.0
    # grasp-oracle constants (synthetic; see module docstring)
    torque_delta_factor: float = 0.35
    load_safety: float = 1.5
    lift_up: float = 0.20
    lift_over: float = 0.10

    def __post_init__(self):
        positive = ("proximal_len", "distal_len", "palm_width", "finger_thickness",
                    "pad_thickness", "pad_width", "joint_limit", "close_step",
                    "close_rate", "friction_mu", "grip_force", "load_safety")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not -self.joint_limit <= self.open_angle <= self.joint_limit:
            raise ValueError("open_angle outside joint limits")
        if not 0.0 <= self.sensor_along <= 1.0:
            raise ValueError("sensor_along must lie in [0, 1]")

    @property
    def pad_offset(self) -> float:
        """Distance from the distal-link centerline to the pad face."""
        return self.finger_thickness / 2.0 + self.pad_thickness


@dataclass(frozen=True, eq=False)
class GripperState:
    """Base pose plus (left-proximal, left-distal, right-proximal, right-distal)."""

    base_pose: Pose
    joint_angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.joint_angles, dtype=float).reshape(4)
        object.__setattr__(self, "joint_angles", a)
        a.setflags(write=False)


def open_state(base_pose: Pose, cfg: GripperConfig) -> GripperState:
    """Gripper at the splayed open pose, distal joints mirroring the proximal."""
    o = cfg.open_angle
    return GripperState(base_pose, np.array([o, -o, o, -o]))


@dataclass(frozen=True, eq=False)
class GripperFK:
    left_proximal: Pose
    left_distal: Pose
    right_proximal: Pose
    right_distal: Pose
    pad_left: Pose
    pad_right: Pose
    sensor_left: Pose
    sensor_right: Pose


_Z = np.array([0.0, 0.0, 1.0])
_X = np.array([1.0, 0.0, 0.0])


def _check_limits(state: GripperState, cfg: GripperConfig) -> None:
    lim = cfg.joint_limit + 1e-9
    if np.any(np.abs(state.joint_angles) > lim):
        raise ValueError(f"joint angles {state.joint_angles} exceed limit {cfg.joint_limit}")


def forward_kinematics(state: GripperState, cfg: GripperConfig) -> GripperFK:
    """World poses of the four links, the pad faces and the two sensors.

    Positive joint angles close the fingers, so the left chain (on +y)
    rotates by -theta about z and the right chain by +theta. Sensors share
    the pad-face frame: +z is the pad normal pointing into the grasp
    region, +x runs along the distal link.
    """
    _check_limits(state, cfg)
    lp, ld, rp, rd = state.joint_angles
    half = cfg.palm_width / 2.0

    def chain(side, prox, dist):
        base_joint = Pose(np.array([0.0, side * half, 0.0]),
                          quat_from_axis_angle(_Z, -side * prox))
        proximal = compose(state.base_pose, base_joint)
        knuckle = Pose(np.array([cfg.proximal_len, 0.0, 0.0]),
                       quat_from_axis_angle(_Z, -side * dist))
        distal = compose(proximal, knuckle)
        # pad face: +z out of the pad, toward the opposing finger
        face = Pose(np.array([cfg.distal_len / 2.0, -side * cfg.pad_offset, 0.0]),
                    quat_from_axis_angle(_X, side * math.pi / 2.0))
        pad = compose(distal, face)
        mount = Pose(np.array([cfg.distal_len * cfg.sensor_along,
                               -side * cfg.pad_offset, 0.0]),
                     quat_from_axis_angle(_X, side * math.pi / 2.0))
        sensor = compose(distal, mount)
        return proximal, distal, pad, sensor

    l_prox, l_dist, l_pad, l_sens = chain(+1.0, lp, ld)
    r_prox, r_dist, r_pad, r_sens = chain(-1.0, rp, rd)
    return GripperFK(l_prox, l_dist, r_prox, r_dist, l_pad, r_pad, l_sens, r_sens)


@dataclass(frozen=True, eq=False)
class GraspOutcome:
    success: bool
    contacts: tuple  # (finger, surface point (3,), outward object normal (3,))
    final_joint_angles: np.ndarray
    failure_reason: str
    closing_axis: np.ndarray  # gripper +y in world: left pad lies along +axis

    def __post_init__(self):
        if self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"unknown failure_reason {self.failure_reason!r}")
        if self.success and self.failure_reason != "none":
            raise ValueError("a successful grasp cannot carry a failure reason")


def _pad_grid(cfg: GripperConfig, shape):
    na, nb = shape
    a = np.linspace(0.0, cfg.distal_len, na)
    b = np.linspace(-cfg.pad_width / 2.0, cfg.pad_width / 2.0, nb)
    aa, bb = np.meshgrid(a, b, indexing="ij")
    return aa.ravel(), bb.ravel()


def _pad_points(cfg: GripperConfig, side: float, thetas: np.ndarray, a, b) -> np.ndarray:
    """Pad-face sample points in the gripper base frame, one row per angle.

    Under the parallel-jaw mimic the distal link stays parallel to +x, so
    the pad face is simply translated as the proximal angle grows.
    """
    x0 = cfg.proximal_len * np.cos(thetas)
    ypad = side * (cfg.palm_width / 2.0 - cfg.proximal_len * np.sin(thetas) - cfg.pad_offset)
    pts = np.empty((thetas.size, a.size, 3))
    pts[:, :, 0] = x0[:, None] + a[None, :]
    pts[:, :, 1] = ypad[:, None]
    pts[:, :, 2] = b[None, :]
    return pts


def _scene_sdf(scene: Scene, pts: np.ndarray) -> np.ndarray:
    best = np.full(pts.shape[0], np.inf)
    for _, shape, pose in scene.objects:
        best = np.minimum(best, signed_distance(shape, pose, pts))
    return best


def pad_sample_points(state: GripperState, cfg: GripperConfig,
                      grid: tuple = _SWEEP_GRID) -> np.ndarray:
    """World-frame sample points on both pad faces at the current angles.

    Useful for checking that an approach pose is collision-free before
    closing: if any of these points sits inside an object, the open gripper
    already intersects it.
    """
    a, b = _pad_grid(cfg, grid)
    rot = state.base_pose.matrix()
    t = state.base_pose.translation
    pts = []
    for side, theta in ((1.0, state.joint_angles[0]), (-1.0, state.joint_angles[2])):
        local = _pad_points(cfg, side, np.array([float(theta)]), a, b)[0]
        pts.append(local @ rot.T + t)
    return np.concatenate(pts, axis=0)


def close_fingers(
    state: GripperState,
    scene: Scene,
    cfg: GripperConfig,
    max_travel: float | None = None,
) -> GraspOutcome:
    """Close both fingers in `close_step` increments until touch or limit.

    Each finger advances independently and freezes at its first step whose
    pad samples penetrate any scene object (the support plane is not a
    contact surface). The recorded contact is the mean of the deepest
    dense-grid pad samples — the center of the contact patch — projected
    onto the object surface, with the object's outward normal there.
    The caller must supply a collision-free starting state. No label is
    assigned here beyond the contact-count failures.
    """
    _check_limits(state, cfg)
    rot = state.base_pose.matrix()
    t = state.base_pose.translation
    a_sweep, b_sweep = _pad_grid(cfg, _SWEEP_GRID)
    a_dense, b_dense = _pad_grid(cfg, _PATCH_GRID)

    contacts = []
    finals = {}
    for finger, side, idx in (("left", +1.0, 0), ("right", -1.0, 2)):
        th0 = float(state.joint_angles[idx])
        th_stop = cfg.joint_limit if max_travel is None else min(cfg.joint_limit, th0 + max_travel)
        if th_stop <= th0 + 1e-12:
            finals[finger] = th0
            continue
        thetas = np.append(np.arange(th0 + cfg.close_step, th_stop, cfg.close_step), th_stop)
        pts = _pad_points(cfg, side, thetas, a_sweep, b_sweep)
        world = pts.reshape(-1, 3) @ rot.T + t
        depth = _scene_sdf(scene, world).reshape(thetas.size, -1).min(axis=1)
        hit = np.flatnonzero(depth <= 0.0)
        if hit.size == 0:
            finals[finger] = float(th_stop)
            continue
        th_c = float(thetas[hit[0]])
        finals[finger] = th_c
        patch = _pad_points(cfg, side, np.array([th_c]), a_dense, b_dense)[0] @ rot.T + t
        d = _scene_sdf(scene, patch)
        p = patch[d <= d.min() + _PATCH_TIE_TOL].mean(axis=0)
        _, shape, pose = min(scene.objects,
                             key=lambda o: float(signed_distance(o[1], o[2], p[None, :])[0]))
        normal = sdf_normal(shape, pose, p)
        surface = p - float(signed_distance(shape, pose, p[None, :])[0]) * normal
        contacts.append((finger, surface, normal))

    angles = np.array([finals["left"], -finals["left"], finals["right"], -finals["right"]])
    if len(contacts) == 2:
        reason = "none"  # pending label_grasp
    elif len(contacts) == 1:
        reason = "single_finger"
    else:
        reason = "no_contact"
    return GraspOutcome(False, tuple(contacts), angles, reason, rot @ np.array([0.0, 1.0, 0.0]))


def _max_half_extent_perp(shape: Shape, pose: Pose, axis: np.ndarray) -> float:
    """Largest half-width of the posed shape over directions perpendicular to axis."""
    e1 = np.cross(axis, _Z)
    if float(e1 @ e1) < 1e-18:
        e1 = np.cross(axis, _X)
    e1 = e1 / math.sqrt(float(e1 @ e1))
    e2 = np.cross(axis, e1)
    best = 0.0
    for ang in np.linspace(0.0, math.pi, 16, endpoint=False):
        d = math.cos(ang) * e1 + math.sin(ang) * e2
        width = shape.support(pose, d) + shape.support(pose, -d)
        best = max(best, width / 2.0)
    return best


def label_grasp(
    outcome: GraspOutcome,
    shape: Shape,
    pose: Pose,
    cfg: GripperConfig,
    lift: tuple | None = None,
    mass_kg: float | None = None,
) -> tuple[bool, str]:
    """Decide whether the closed grasp survives the prescribed lift-and-carry.

    `lift` is the (up, over) displacement in meters the grasp must hold
    through, defaulting to the config's (lift_up, lift_over); the static
    load margin `load_safety` is the stand-in for the accelerations that
    motion induces. Success requires all of:
    one contact per finger; both contact normals inside the friction cone
    about the closing axis; the contact line passing near the center of
    mass (within `torque_delta_factor` of the largest half-extent
    perpendicular to the closing axis); and enough friction to carry the
    object's weight with margin.
    """
    if lift is None:
        lift = (cfg.lift_up, cfg.lift_over)
    contacts = outcome.contacts
    if len(contacts) == 0:
        return False, "no_contact"
    fingers = {c[0] for c in contacts}
    if len(contacts) == 1 or len(fingers) < 2:
        return False, "single_finger"

    axis = np.asarray(outcome.closing_axis, dtype=float)
    axis = axis / math.sqrt(float(axis @ axis))
    cone = math.atan(cfg.friction_mu)
    for finger, _, normal in contacts:
        toward_pad = axis if finger == "left" else -axis
        angle = math.acos(min(1.0, max(-1.0, float(normal @ toward_pad))))
        if angle > cone + 1e-12:
            return False, "friction_cone"

    (_, p1, _), (_, p2, _) = contacts[0], contacts[1]
    line = p2 - p1
    line = line / math.sqrt(float(line @ line))
    com = transform_point(pose, shape.centroid_local())
    lever = float(np.linalg.norm(np.cross(com - p1, line)))
    delta = cfg.torque_delta_factor * _max_half_extent_perp(shape, pose, axis)
    if lever > delta:
        return False, "torque_slip"

    mass = shape.mass_kg if mass_kg is None else mass_kg
    if cfg.friction_mu * cfg.grip_force < mass * GRAVITY * cfg.load_safety:
        return False, "lift_slip"
    return True, "none"


def finalize(outcome: GraspOutcome, success: bool, reason: str) -> GraspOutcome:
    return replace(outcome, success=success, failure_reason=reason)


# --- config file io (lengths in cm, angles in degrees) ----------------------

_CM_FIELDS = {
    "proximal_len": "proximal_len_cm",
    "distal_len": "distal_len_cm",
    "palm_width": "palm_width_cm",
    "finger_thickness": "finger_thickness_cm",
    "pad_thickness": "pad_thickness_cm",
    "pad_width": "pad_width_cm",
    "lift_up": "lift_up_cm",
    "lift_over": "lift_over_cm",
}
_DEG_FIELDS = {
    "open_angle": "open_angle_deg",
    "joint_limit": "joint_limit_deg",
    "close_step": "close_step_deg",
    "close_rate": "close_rate_deg_s",
}
_PLAIN_FIELDS = ("sensor_along", "friction_mu", "grip_force",
                 "torque_delta_factor", "load_safety")


def gripper_config_to_dict(cfg: GripperConfig) -> dict:
    out = {}
    for attr, key in _CM_FIELDS.items():
        out[key] = getattr(cfg, attr) * 100.0
    for attr, key in _DEG_FIELDS.items():
        out[key] = math.degrees(getattr(cfg, attr))
    for attr in _PLAIN_FIELDS:
        out[attr] = getattr(cfg, attr)
    return out


def gripper_config_from_dict(data: dict) -> GripperConfig:
    kwargs = {}
    for attr, key in _CM_FIELDS.items():
        if key in data:
            kwargs[attr] = float(data[key]) / 100.0
    for attr, key in _DEG_FIELDS.items():
        if key in data:
            kwargs[attr] = math.radians(float(data[key]))
    for attr in _PLAIN_FIELDS:
        if attr in data:
            kwargs[attr] = float(data[attr])
    known = set(_CM_FIELDS.values()) | set(_DEG_FIELDS.values()) | set(_PLAIN_FIELDS)
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown gripper config keys: {sorted(unknown)}")
    return GripperConfig(**kwargs)


def load_gripper_config(path) -> GripperConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return gripper_config_from_dict(data)


def save_gripper_config(cfg: GripperConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(gripper_config_to_dict(cfg), fh, sort_keys=True)
