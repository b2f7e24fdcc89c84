"""Multi-zone time-of-flight sensor simulation.

The simulated device ranges an 8x8 grid of zones spanning a 90-degree
diagonal field of view and reports up to four targets per zone, matching
the output surface of the real part: per-target distance, standard
deviation, reflectance, signal and status, plus zone-level metadata
(target count, SPAD count, reading quality, ambient light).

Distances are radial, i.e. measured along each zone's own viewing ray,
which is how multizone ranging devices report range. A zone with no
return inside ``max_range`` is marked invalid and carries no targets.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import Pose
from .scene import Scene, surface_hits

GRID_ROWS = 8
GRID_COLS = 8
N_ZONES = GRID_ROWS * GRID_COLS
MAX_TARGETS = 4

# Zone-level constants of the simulated part: every zone aggregates a fixed
# 16-SPAD patch, and signal is normalized so a reflectance-1.0 surface at
# 10 cm returns 1.0 (an uncalibrated photons-per-SPAD proxy).
SPAD_COUNT = 16
SIGNAL_SCALE = 0.01

# Supersampled sub-ray returns closer together than this are pooled into one
# reported target, the way slanted surfaces smear into a single wide return.
_SUPERSAMPLE_MERGE_M = 0.01


@dataclass(frozen=True)
class SensorConfig:
    """Geometry, noise and sampling knobs for one sensor.

    ``samples_per_zone`` is the supersampling factor N: each zone is ranged
    with an N x N bundle of sub-rays instead of its single center ray.
    The default of 1 keeps the one-ray-per-zone model. ``stream_id``
    distinguishes the rng streams of multiple sensors during data
    generation; it does not affect a single capture.
    """

    diagonal_fov: float = math.pi / 2
    max_range: float = 3.5
    noise_sigma: float = 0.003
    samples_per_zone: int = 1
    stream_id: int = 0

    def __post_init__(self):
        if not 0.0 < self.diagonal_fov < math.pi:
            raise ValueError(f"diagonal_fov must lie in (0, pi), got {self.diagonal_fov}")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")
        if int(self.samples_per_zone) != self.samples_per_zone or self.samples_per_zone < 1:
            raise ValueError("samples_per_zone must be an integer >= 1")


@dataclass(frozen=True)
class TargetReading:
    """One ranged surface within a zone (the five per-target scalars)."""

    distance_m: float
    std_dev_m: float
    reflectance: float
    signal: float
    status: int = 0


@dataclass(frozen=True)
class ZoneReading:
    targets: tuple = ()
    num_targets: int = 0
    spad_count: int = SPAD_COUNT
    quality: str = "invalid"
    ambient: float = 0.0

    def __post_init__(self):
        if self.quality not in ("valid", "invalid"):
            raise ValueError(f"quality must be 'valid' or 'invalid', got {self.quality!r}")
        if self.num_targets != len(self.targets):
            raise ValueError("num_targets must equal the number of populated targets")
        if (self.quality == "invalid") != (self.num_targets == 0):
            raise ValueError("a zone is invalid exactly when it has no targets")
        if self.spad_count <= 0:
            raise ValueError("spad_count must be positive")
        if self.ambient < 0.0:
            raise ValueError("ambient must be non-negative")
        for earlier, later in zip(self.targets, self.targets[1:]):
            if later.distance_m < earlier.distance_m:
                raise ValueError("targets must be sorted ascending by distance")


@dataclass(frozen=True)
class RawSensorFrame:
    sensor_id: str
    zones: tuple
    timestamp: float = 0.0

    def __post_init__(self):
        if self.sensor_id not in ("left", "right"):
            raise ValueError(f"sensor_id must be 'left' or 'right', got {self.sensor_id!r}")
        if len(self.zones) != N_ZONES:
            raise ValueError(f"expected {N_ZONES} zones, got {len(self.zones)}")

    def primary_distances(self, default: float = math.nan) -> np.ndarray:
        """First-target distance per zone, row-major; `default` where invalid."""
        out = np.full(N_ZONES, default)
        for i, z in enumerate(self.zones):
            if z.num_targets:
                out[i] = z.targets[0].distance_m
        return out


def zone_direction(row: int, col: int, cfg: SensorConfig) -> np.ndarray:
    """Unit viewing ray through the center of zone (row, col), sensor frame.

    Pinhole model with +z pointing out of the sensor: the grid spans the
    diagonal FOV corner to corner, so the per-axis tangent half-extent is
    tan(fov/2)/sqrt(2), and zone centers sit half a pixel in from the edges.
    """
    if not (0 <= row < GRID_ROWS and 0 <= col < GRID_COLS):
        raise ValueError(f"zone index out of range: ({row}, {col})")
    t = math.tan(cfg.diagonal_fov / 2.0) / math.sqrt(2.0)
    u = (2.0 * (col + 0.5) / GRID_COLS - 1.0) * t
    v = (2.0 * (row + 0.5) / GRID_ROWS - 1.0) * t
    d = np.array([u, v, 1.0])
    return d / math.sqrt(float(d @ d))


@lru_cache(maxsize=16)
def _zone_directions(diagonal_fov: float) -> np.ndarray:
    cfg = SensorConfig(diagonal_fov=diagonal_fov)
    out = np.empty((N_ZONES, 3))
    for row in range(GRID_ROWS):
        for col in range(GRID_COLS):
            out[row * GRID_COLS + col] = zone_direction(row, col, cfg)
    out.setflags(write=False)
    return out


def zone_directions(cfg: SensorConfig) -> np.ndarray:
    """All 64 zone-center rays as a read-only (64, 3) array, row-major."""
    return _zone_directions(cfg.diagonal_fov)


@lru_cache(maxsize=16)
def _sub_directions(diagonal_fov: float, n: int) -> np.ndarray:
    """Zone-major (64*n*n, 3) bundle of n x n sub-rays per zone."""
    t = math.tan(diagonal_fov / 2.0) / math.sqrt(2.0)
    out = np.empty((N_ZONES * n * n, 3))
    i = 0
    for row in range(GRID_ROWS):
        for col in range(GRID_COLS):
            for a in range(n):
                for b in range(n):
                    u = (2.0 * (col + (b + 0.5) / n) / GRID_COLS - 1.0) * t
                    v = (2.0 * (row + (a + 0.5) / n) / GRID_ROWS - 1.0) * t
                    d = np.array([u, v, 1.0])
                    out[i] = d / math.sqrt(float(d @ d))
                    i += 1
    out.setflags(write=False)
    return out


def _supersampled_hits(sensor_pose: Pose, scene: Scene, cfg: SensorConfig):
    """Per-zone targets pooled from an N x N sub-ray bundle.

    All sub-ray surface crossings of a zone are sorted and greedily
    clustered: a gap wider than the merge width starts a new target.
    Cluster distance/reflectance are the means over pooled crossings.
    """
    n = cfg.samples_per_zone
    rot = sensor_pose.matrix()
    dirs = _sub_directions(cfg.diagonal_fov, n) @ rot.T
    origins = np.broadcast_to(sensor_pose.translation, dirs.shape)
    d_all, r_all = surface_hits(origins, dirs, scene, cfg.max_range, MAX_TARGETS)
    d_all = d_all.reshape(N_ZONES, n * n * MAX_TARGETS)
    r_all = r_all.reshape(N_ZONES, n * n * MAX_TARGETS)
    out_d = np.full((N_ZONES, MAX_TARGETS), np.inf)
    out_r = np.zeros((N_ZONES, MAX_TARGETS))
    for z in range(N_ZONES):
        finite = np.isfinite(d_all[z])
        if not finite.any():
            continue
        order = np.argsort(d_all[z, finite], kind="stable")
        ds = d_all[z, finite][order]
        rs = r_all[z, finite][order]
        starts = np.flatnonzero(np.diff(ds) > _SUPERSAMPLE_MERGE_M) + 1
        for j, grp in enumerate(np.split(np.arange(ds.size), starts)[:MAX_TARGETS]):
            out_d[z, j] = ds[grp].mean()
            out_r[z, j] = rs[grp].mean()
    return out_d, out_r


def capture_frame(
    sensor_pose: Pose,
    scene: Scene,
    cfg: SensorConfig,
    rng: np.random.Generator,
    *,
    sensor_id: str = "left",
    timestamp: float = 0.0,
) -> RawSensorFrame:
    """Range the scene once from `sensor_pose` and build a full 64-zone frame.

    Reported distances are the true radial hit distances plus additive
    Gaussian noise of width ``noise_sigma`` (drawn once per capture as a
    64 x 4 block, so identical rng state gives an identical frame).
    Signal follows the inverse-square return from the true range; all
    metadata fields are noiseless. Targets are re-sorted after noise so
    each zone's list stays ascending by reported distance.
    """
    rot = sensor_pose.matrix()
    if cfg.samples_per_zone == 1:
        dirs = zone_directions(cfg) @ rot.T
        origins = np.broadcast_to(sensor_pose.translation, dirs.shape)
        true_d, refl = surface_hits(origins, dirs, scene, cfg.max_range, MAX_TARGETS)
    else:
        true_d, refl = _supersampled_hits(sensor_pose, scene, cfg)
    noise = rng.normal(0.0, cfg.noise_sigma, size=(N_ZONES, MAX_TARGETS))

    finite = np.isfinite(true_d)
    signal = np.zeros_like(true_d)
    signal[finite] = SIGNAL_SCALE * refl[finite] / np.maximum(true_d[finite], 1e-12) ** 2
    noisy = np.where(finite, true_d + noise, np.inf)

    zones = []
    for z in range(N_ZONES):
        k = int(finite[z].sum())
        if k == 0:
            zones.append(ZoneReading(ambient=scene.ambient))
            continue
        order = np.argsort(noisy[z, :k], kind="stable")
        targets = tuple(
            TargetReading(
                distance_m=float(noisy[z, i]),
                std_dev_m=cfg.noise_sigma,
                reflectance=float(refl[z, i]),
                signal=float(signal[z, i]),
            )
            for i in order
        )
        zones.append(
            ZoneReading(
                targets=targets,
                num_targets=k,
                quality="valid",
                ambient=scene.ambient,
            )
        )
    return RawSensorFrame(sensor_id=sensor_id, zones=tuple(zones), timestamp=timestamp)
