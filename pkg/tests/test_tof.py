"""Sensor-model tests.

The frozen geometry numbers below were computed independently from the
pinhole formula with 40-digit arithmetic (mpmath) and rounded to double
precision, so they check the implementation rather than echo it.
"""

import math

import numpy as np
import pytest

from tofgrasp.geometry import Pose
from tofgrasp.scene import Ray, Scene, Shape, ray_cast
from tofgrasp.tof import (
    GRID_COLS,
    GRID_ROWS,
    N_ZONES,
    SIGNAL_SCALE,
    SPAD_COUNT,
    SensorConfig,
    TargetReading,
    ZoneReading,
    capture_frame,
    zone_direction,
    zone_directions,
)

# 90-degree diagonal FOV, zone (3, 3): tangent-plane coordinate, unit
# direction, radial range to a perpendicular plane at 0.1 m.
ZONE_33_U = -0.08838834764831845
ZONE_33_DIR = (-0.08770580193070292, -0.08770580193070292, 0.9922778767136676)
ZONE_33_RANGE_AT_01 = 0.10077822185373186
# outermost zone center (7, 7): diagonal tangent 0.875 -> off-axis angle
CORNER_ZONE_ANGLE = 0.7188299996216245  # atan(0.875), radians


def _zone_index(row, col):
    return row * GRID_COLS + col


def test_zone_direction_matches_frozen_pinhole_values():
    d = zone_direction(3, 3, SensorConfig())
    assert d == pytest.approx(ZONE_33_DIR, abs=1e-12)
    # tangent-plane coordinate recovered from the direction
    assert d[0] / d[2] == pytest.approx(ZONE_33_U, abs=1e-12)


def test_zone_directions_are_unit_and_symmetric():
    cfg = SensorConfig()
    dirs = zone_directions(cfg)
    assert dirs.shape == (N_ZONES, 3)
    assert np.linalg.norm(dirs, axis=1) == pytest.approx(np.ones(N_ZONES), abs=1e-12)
    for row in range(GRID_ROWS):
        for col in range(GRID_COLS):
            d = dirs[_zone_index(row, col)]
            mirror = dirs[_zone_index(row, GRID_COLS - 1 - col)]
            assert d[0] == pytest.approx(-mirror[0], abs=1e-15)
            transpose = dirs[_zone_index(col, row)]
            assert d[0] == pytest.approx(transpose[1], abs=1e-15)
    assert not dirs.flags.writeable
    assert zone_directions(cfg) is dirs  # cached per FOV


def test_outermost_zone_off_axis_angle():
    d = zone_direction(7, 7, SensorConfig())
    angle = math.atan2(math.hypot(d[0], d[1]), d[2])
    assert angle == pytest.approx(CORNER_ZONE_ANGLE, abs=1e-12)
    assert math.degrees(angle) == pytest.approx(41.18592516570965, abs=1e-9)


def test_grid_corner_reaches_half_diagonal_fov():
    # Extrapolating half a pixel past the outermost zone center lands on the
    # grid border, which by definition of diagonal FOV sits at fov/2 off axis.
    cfg = SensorConfig()
    d7 = zone_direction(0, 7, cfg)
    d6 = zone_direction(0, 6, cfg)
    u7, u6 = d7[0] / d7[2], d6[0] / d6[2]
    u_border = u7 + (u7 - u6) / 2.0
    corner_angle = math.atan(math.hypot(u_border, u_border))
    assert corner_angle == pytest.approx(cfg.diagonal_fov / 2.0, abs=1e-12)


def test_zone_direction_rejects_bad_indices():
    cfg = SensorConfig()
    for row, col in [(-1, 0), (0, 8), (8, 8), (3, -2)]:
        with pytest.raises(ValueError):
            zone_direction(row, col, cfg)


def test_sensor_config_validation():
    with pytest.raises(ValueError):
        SensorConfig(diagonal_fov=math.pi)
    with pytest.raises(ValueError):
        SensorConfig(max_range=0.0)
    with pytest.raises(ValueError):
        SensorConfig(noise_sigma=-1e-9)
    with pytest.raises(ValueError):
        SensorConfig(samples_per_zone=0)


def _looking_down(height):
    """Sensor pose at the given height with its optical axis pointing -z."""
    return Pose.from_rpy([0.0, 0.0, height], roll=math.pi)


def test_perpendicular_plane_all_zones_radial():
    # Acceptance geometry check: plane 0.1 m away, perpendicular to the
    # optical axis, zero noise -> every zone reads 0.1 / cos(theta_zone).
    cfg = SensorConfig(noise_sigma=0.0)
    scene = Scene(support_plane=0.0)
    frame = capture_frame(_looking_down(0.1), scene, cfg, np.random.default_rng(0))
    t = math.tan(cfg.diagonal_fov / 2.0) / math.sqrt(2.0)
    for row in range(GRID_ROWS):
        for col in range(GRID_COLS):
            zone = frame.zones[_zone_index(row, col)]
            assert zone.quality == "valid"
            assert zone.num_targets == 1
            u = (2.0 * (col + 0.5) / GRID_COLS - 1.0) * t
            v = (2.0 * (row + 0.5) / GRID_ROWS - 1.0) * t
            expected = 0.1 * math.sqrt(u * u + v * v + 1.0)
            assert zone.targets[0].distance_m == pytest.approx(expected, abs=1e-9)
    center = frame.zones[_zone_index(3, 3)].targets[0]
    assert center.distance_m == pytest.approx(ZONE_33_RANGE_AT_01, abs=1e-9)
    assert center.reflectance == scene.plane_reflectance


def test_signal_follows_inverse_square():
    cfg = SensorConfig(noise_sigma=0.0)
    scene = Scene(support_plane=0.0)
    near = capture_frame(_looking_down(0.1), scene, cfg, np.random.default_rng(0))
    far = capture_frame(_looking_down(0.2), scene, cfg, np.random.default_rng(0))
    for i in range(N_ZONES):
        tn, tf = near.zones[i].targets[0], far.zones[i].targets[0]
        expected = SIGNAL_SCALE * scene.plane_reflectance / tn.distance_m**2
        assert tn.signal == pytest.approx(expected, rel=1e-12)
        # doubling the range quarters the return
        assert tn.signal / tf.signal == pytest.approx(4.0, abs=1e-9)


def test_empty_scene_every_zone_invalid():
    frame = capture_frame(Pose.identity(), Scene(), SensorConfig(), np.random.default_rng(3))
    for zone in frame.zones:
        assert zone.quality == "invalid"
        assert zone.num_targets == 0
        assert zone.targets == ()
        assert zone.spad_count == SPAD_COUNT
        assert zone.ambient == 0.05


def test_out_of_range_zones_marked_invalid():
    # Plane 3.0 m away: the center zones stay under max_range 3.5, the
    # corner zones (radial factor ~1.37) land beyond it.
    cfg = SensorConfig(noise_sigma=0.0)
    frame = capture_frame(_looking_down(3.0), Scene(support_plane=0.0), cfg, np.random.default_rng(0))
    assert frame.zones[_zone_index(3, 3)].quality == "valid"
    assert frame.zones[_zone_index(0, 0)].quality == "invalid"
    for zone in frame.zones:
        for target in zone.targets:
            assert target.distance_m <= cfg.max_range + 1e-12


def test_zero_noise_matches_ray_cast_exactly():
    shapes = [
        ("ball", Shape.sphere(0.08, reflectance=0.7), Pose(np.array([0.05, -0.02, 0.4]))),
        ("crate", Shape.box((0.1, 0.1, 0.05), reflectance=0.5), Pose(np.array([-0.1, 0.1, 0.6]))),
        ("tube", Shape.cylinder(0.05, 0.1, reflectance=0.9),
         Pose.from_rpy([0.0, 0.15, 0.5], roll=0.4, pitch=0.2)),
        ("wall", Shape.box((3.0, 3.0, 0.01), reflectance=0.6), Pose(np.array([0.0, 0.0, 1.2]))),
    ]
    scene = Scene(objects=tuple(shapes), support_plane=-0.5)
    cfg = SensorConfig(noise_sigma=0.0)
    pose = Pose.from_rpy([0.01, -0.02, 0.0], roll=0.05, pitch=-0.08, yaw=0.3)
    frame = capture_frame(pose, scene, cfg, np.random.default_rng(11))
    dirs = zone_directions(cfg) @ pose.matrix().T
    checked = 0
    for i in range(N_ZONES):
        hit = ray_cast(Ray(pose.translation, dirs[i]), scene, cfg.max_range)
        zone = frame.zones[i]
        if hit is None:
            assert zone.quality == "invalid"
            continue
        assert zone.num_targets >= 1
        assert zone.targets[0].distance_m == hit.distance  # bitwise equal
        checked += 1
    assert checked > 40


def test_same_seed_gives_identical_frames():
    scene = Scene(objects=(("b", Shape.sphere(0.1), Pose(np.array([0.0, 0.0, 0.3]))),),
                  support_plane=-0.2)
    cfg = SensorConfig()
    pose = Pose.identity()
    a = capture_frame(pose, scene, cfg, np.random.default_rng(42), timestamp=1.5)
    b = capture_frame(pose, scene, cfg, np.random.default_rng(42), timestamp=1.5)
    assert a == b
    c = capture_frame(pose, scene, cfg, np.random.default_rng(43), timestamp=1.5)
    assert a != c


def test_noise_statistics_match_sigma():
    cfg = SensorConfig(noise_sigma=0.003)
    scene = Scene(support_plane=0.0)
    pose = _looking_down(0.5)
    truth = capture_frame(pose, scene, SensorConfig(noise_sigma=0.0),
                          np.random.default_rng(0)).primary_distances()
    rng = np.random.default_rng(7)
    residuals = []
    for _ in range(100):
        frame = capture_frame(pose, scene, cfg, rng)
        residuals.append(frame.primary_distances() - truth)
    residuals = np.concatenate(residuals)
    assert residuals.size == 6400
    assert abs(residuals.mean()) < 2e-4
    assert 0.0028 < residuals.std() < 0.0032
    assert all(z.targets[0].std_dev_m == cfg.noise_sigma
               for z in frame.zones if z.num_targets)


def test_layered_scene_reports_targets_in_depth_order():
    def slab(depth, reflectance):
        return Shape.box((5.0, 5.0, 0.0005), reflectance=reflectance), \
            Pose(np.array([0.0, 0.0, depth + 0.0005]))

    s1, p1 = slab(0.1, 0.9)
    s2, p2 = slab(0.2, 0.6)
    s3, p3 = slab(0.3, 0.3)
    scene = Scene(objects=(("a", s1, p1), ("b", s2, p2), ("c", s3, p3)))
    cfg = SensorConfig(noise_sigma=0.0)
    frame = capture_frame(Pose.identity(), scene, cfg, np.random.default_rng(0))
    zone = frame.zones[_zone_index(3, 3)]
    assert zone.num_targets == 3
    norm = 1.0077822185373187
    assert [t.distance_m for t in zone.targets] == pytest.approx(
        [0.1 * norm, 0.2 * norm, 0.3 * norm], abs=1e-9)
    assert [t.reflectance for t in zone.targets] == [0.9, 0.6, 0.3]
    assert all(t.status == 0 for t in zone.targets)


def test_noisy_targets_stay_sorted():
    # Two surfaces 2 mm apart with 10 mm noise: raw order flips often, the
    # reported per-zone lists must come out ascending anyway.
    near = Shape.box((5.0, 5.0, 0.0005), reflectance=0.8)
    fare = Shape.box((5.0, 5.0, 0.0005), reflectance=0.4)
    scene = Scene(objects=(("n", near, Pose(np.array([0.0, 0.0, 0.1005]))),
                           ("f", fare, Pose(np.array([0.0, 0.0, 0.1025])))))
    cfg = SensorConfig(noise_sigma=0.01)
    rng = np.random.default_rng(1234)
    swapped = 0
    for _ in range(50):
        frame = capture_frame(Pose.identity(), scene, cfg, rng)
        for zone in frame.zones:
            dists = [t.distance_m for t in zone.targets]
            assert dists == sorted(dists)
            if zone.num_targets == 2 and zone.targets[0].reflectance == 0.4:
                swapped += 1
    assert swapped > 0  # the sort actually had work to do


def test_supersampling_single_surface_matches_center_ray():
    scene = Scene(support_plane=0.0)
    pose = _looking_down(0.1)
    center = capture_frame(pose, scene, SensorConfig(noise_sigma=0.0),
                           np.random.default_rng(0))
    super3 = capture_frame(pose, scene, SensorConfig(noise_sigma=0.0, samples_per_zone=3),
                           np.random.default_rng(0))
    for i in range(N_ZONES):
        assert super3.zones[i].num_targets == 1
        delta = super3.zones[i].targets[0].distance_m - center.zones[i].targets[0].distance_m
        assert abs(delta) < 0.002


def test_supersampling_pools_split_zone_into_two_targets():
    # A half-occluder whose edge cuts through zone (3,3): with 2x2 sub-rays
    # the lower-u pair hits the occluder at 0.05 m, all four reach the
    # backdrop at 0.1 m, so the zone pools into exactly two targets whose
    # distances are the sub-ray means.
    occluder = Shape.box((5.0, 5.0, 0.0005), reflectance=0.5)
    backdrop = Shape.box((5.0, 5.0, 0.0005), reflectance=0.9)
    edge = -0.0035
    scene = Scene(objects=(
        ("occ", occluder, Pose(np.array([edge - 5.0, 0.0, 0.0505]))),
        ("back", backdrop, Pose(np.array([0.0, 0.0, 0.1005]))),
    ))
    cfg = SensorConfig(noise_sigma=0.0, samples_per_zone=2)
    frame = capture_frame(Pose.identity(), scene, cfg, np.random.default_rng(0))

    t = math.tan(cfg.diagonal_fov / 2.0) / math.sqrt(2.0)
    sub = [(2.0 * (3 + (k + 0.5) / 2) / 8 - 1.0) * t for k in (0, 1)]
    norms = [math.sqrt(u * u + v * v + 1.0) for u in sub for v in sub]
    # u = sub[0] sub-rays (two of them) reach x <= edge at z = 0.05
    assert sub[0] * 0.05 <= edge < sub[1] * 0.05
    front = [0.05 * math.sqrt(sub[0] ** 2 + v * v + 1.0) for v in sub]
    back = [0.1 * n for n in norms]

    zone = frame.zones[_zone_index(3, 3)]
    assert zone.num_targets == 2
    assert zone.targets[0].distance_m == pytest.approx(np.mean(front), abs=1e-9)
    assert zone.targets[1].distance_m == pytest.approx(np.mean(back), abs=1e-9)
    assert zone.targets[0].reflectance == pytest.approx(0.5)
    assert zone.targets[1].reflectance == pytest.approx(0.9)
    # a zone fully past the edge sees only the backdrop
    far_zone = frame.zones[_zone_index(0, 7)]
    assert far_zone.num_targets == 1
    assert far_zone.targets[0].reflectance == pytest.approx(0.9)


def test_zone_reading_invariants_enforced():
    t1 = TargetReading(0.1, 0.003, 0.8, 1.0)
    t2 = TargetReading(0.2, 0.003, 0.8, 0.25)
    ZoneReading(targets=(t1, t2), num_targets=2, quality="valid", ambient=0.05)
    with pytest.raises(ValueError):
        ZoneReading(targets=(t1,), num_targets=2, quality="valid")
    with pytest.raises(ValueError):
        ZoneReading(targets=(t1,), num_targets=1, quality="invalid")
    with pytest.raises(ValueError):
        ZoneReading(targets=(), num_targets=0, quality="valid")
    with pytest.raises(ValueError):
        ZoneReading(targets=(t2, t1), num_targets=2, quality="valid")
    with pytest.raises(ValueError):
        ZoneReading(targets=(t1,), num_targets=1, quality="valid", ambient=-0.1)


def test_frame_requires_64_zones_and_known_sensor_id():
    zone = ZoneReading(ambient=0.0)
    with pytest.raises(ValueError):
        from tofgrasp.tof import RawSensorFrame
        RawSensorFrame(sensor_id="left", zones=(zone,) * 63)
    with pytest.raises(ValueError):
        from tofgrasp.tof import RawSensorFrame
        RawSensorFrame(sensor_id="top", zones=(zone,) * 64)


def test_frame_capture_meets_latency_budget():
    # 15 Hz end-to-end leaves ~1 ms for a single 64-zone capture.
    import time

    obj = Shape.composite((
        (Shape.cylinder(0.03, 0.05), Pose.identity()),
        (Shape.sphere(0.03), Pose(np.array([0.0, 0.0, 0.05]))),
    ))
    scene = Scene(objects=(("o", obj, Pose(np.array([0.0, 0.0, 0.3]))),),
                  support_plane=-0.1)
    cfg = SensorConfig()
    rng = np.random.default_rng(0)
    capture_frame(Pose.identity(), scene, cfg, rng)  # warm caches
    best = math.inf
    for _ in range(5):
        start = time.perf_counter()
        for _ in range(20):
            capture_frame(Pose.identity(), scene, cfg, rng)
        best = min(best, (time.perf_counter() - start) / 20)
    assert best < 1e-3, f"capture took {best * 1e3:.3f} ms"
