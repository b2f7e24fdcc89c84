"""Parametric shapes, scenes, and exact ray-primitive intersection.

Shapes are rigid primitives (box, cylinder, sphere) or composites of posed
children. Everything is immutable after construction, so scenes can be shared
freely across threads. Ray casting is exposed in two forms: a single-ray
`ray_cast` and the batched `surface_hits` used by the sensor simulator, which
intersects many rays against every primitive at once with numpy.

Dimensions are meters. Config files use centimeters and grams and are
converted on load (see `zoo`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, compose, quat_to_matrix, transform_point

SUPPORT_PLANE_ID = "support_plane"
_COINCIDENT_SURFACE_TOL = 1e-9


@dataclass(frozen=True)
class Shape:
    """Rigid shape: a primitive variant or a composite of posed child shapes.

    `dims` by variant: box (hx, hy, hz) half-extents; cylinder (radius,
    half_height), axis along local z; sphere (radius,). Composites keep
    per-child reflectance for the sensor; the composite's own mass is what the
    grasp oracle uses (children are treated as massless geometry).
    """

    variant: str
    dims: tuple = ()
    children: tuple = ()
    surface_reflectance: float = 0.8
    mass_kg: float = 0.1

    def __post_init__(self):
        if self.variant not in ("box", "cylinder", "sphere", "composite"):
            raise ValueError(f"unknown shape variant {self.variant!r}")
        if self.variant == "composite":
            if not self.children:
                raise ValueError("composite shape needs at least one child")
        else:
            if any(d <= 0 for d in self.dims):
                raise ValueError(f"{self.variant} dimensions must be strictly positive: {self.dims}")
        if not (0.0 < self.surface_reflectance <= 1.0):
            raise ValueError("surface_reflectance must be in (0, 1]")
        if self.mass_kg <= 0:
            raise ValueError("mass must be positive")

    @staticmethod
    def box(half_extents, reflectance: float = 0.8, mass_kg: float = 0.1) -> "Shape":
        hx, hy, hz = (float(v) for v in half_extents)
        return Shape("box", (hx, hy, hz), (), reflectance, mass_kg)

    @staticmethod
    def cylinder(radius: float, half_height: float, reflectance: float = 0.8, mass_kg: float = 0.1) -> "Shape":
        return Shape("cylinder", (float(radius), float(half_height)), (), reflectance, mass_kg)

    @staticmethod
    def sphere(radius: float, reflectance: float = 0.8, mass_kg: float = 0.1) -> "Shape":
        return Shape("sphere", (float(radius),), (), reflectance, mass_kg)

    @staticmethod
    def composite(children, reflectance: float = 0.8, mass_kg: float = 0.1) -> "Shape":
        return Shape("composite", (), tuple((c, p) for c, p in children), reflectance, mass_kg)

    def volume(self) -> float:
        if self.variant == "box":
            hx, hy, hz = self.dims
            return 8.0 * hx * hy * hz
        if self.variant == "cylinder":
            r, hh = self.dims
            return math.pi * r * r * 2.0 * hh
        if self.variant == "sphere":
            (r,) = self.dims
            return 4.0 / 3.0 * math.pi * r**3
        return sum(c.volume() for c, _ in self.children)

    def centroid_local(self) -> np.ndarray:
        """Uniform-density centroid in the shape's own frame."""
        if self.variant != "composite":
            return np.zeros(3)
        total = 0.0
        acc = np.zeros(3)
        for child, pose in self.children:
            v = child.volume()
            total += v
            acc += v * transform_point(pose, child.centroid_local())
        return acc / total

    def support(self, pose: Pose, direction) -> float:
        """Max of p . direction over the shape surface placed at `pose`."""
        d = np.asarray(direction, dtype=float)
        rot = pose.matrix()
        dl = rot.T @ d
        base = float(pose.translation @ d)
        if self.variant == "box":
            return base + float(np.abs(dl) @ np.asarray(self.dims))
        if self.variant == "cylinder":
            r, hh = self.dims
            return base + r * math.hypot(dl[0], dl[1]) + hh * abs(dl[2])
        if self.variant == "sphere":
            return base + self.dims[0]
        return max(child.support(compose(pose, cp), d) for child, cp in self.children)


@dataclass(frozen=True)
class Scene:
    """Posed objects over an optional infinite support plane at z = support_plane."""

    objects: tuple = ()
    support_plane: float | None = None
    ambient: float = 0.05
    plane_reflectance: float = 0.30

    def __post_init__(self):
        objs = tuple((str(i), s, p) for i, s, p in self.objects)
        ids = [i for i, _, _ in objs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"object ids must be unique, got {ids}")
        if SUPPORT_PLANE_ID in ids:
            raise ValueError(f"{SUPPORT_PLANE_ID!r} is reserved")
        object.__setattr__(self, "objects", objs)

    def _prims(self) -> list["_FlatPrim"]:
        cached = self.__dict__.get("_prims_cache")
        if cached is None:
            cached = []
            for obj_id, shape, pose in self.objects:
                _flatten(shape, pose, obj_id, cached)
            object.__setattr__(self, "_prims_cache", cached)
        return cached


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        d = np.asarray(self.direction, dtype=float).reshape(3)
        if abs(math.sqrt(float(d @ d)) - 1.0) > 1e-9:
            raise ValueError("ray direction must be a unit vector")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Hit:
    distance: float
    normal: np.ndarray
    object_id: str


@dataclass(frozen=True)
class _FlatPrim:
    """A primitive flattened to world coordinates (composites expanded)."""

    variant: str
    dims: tuple
    origin: np.ndarray
    rot: np.ndarray  # world from local
    object_id: str
    reflectance: float


def _flatten(shape: Shape, pose: Pose, obj_id: str, out: list) -> None:
    if shape.variant == "composite":
        for child, child_pose in shape.children:
            _flatten(child, compose(pose, child_pose), obj_id, out)
    else:
        out.append(
            _FlatPrim(shape.variant, shape.dims, pose.translation, pose.matrix(), obj_id, shape.surface_reflectance)
        )


# --- per-primitive first surface crossing, vectorized over rays -------------

def _entry_box(o, d, dims):
    hx = np.asarray(dims)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-hx - o) * inv
        t2 = (hx - o) * inv
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    # parallel rays: inside the slab keeps (-inf, inf), outside misses
    parallel = np.abs(d) < 1e-15
    inside_slab = np.abs(o) <= hx
    near = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), near)
    far = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), far)
    t_near = near.max(axis=-1)
    t_far = far.min(axis=-1)
    hit = (t_near <= t_far) & (t_far >= 0.0)
    entry = np.where(t_near >= 0.0, t_near, t_far)
    return np.where(hit, entry, np.inf)


def _entry_sphere(o, d, dims):
    r = dims[0]
    b = np.einsum("...i,...i->...", o, d)
    c = np.einsum("...i,...i->...", o, o) - r * r
    disc = b * b - c
    s = np.sqrt(np.maximum(disc, 0.0))
    t1 = -b - s
    t2 = -b + s
    entry = np.where(t1 >= 0.0, t1, np.where(t2 >= 0.0, t2, np.inf))
    return np.where(disc >= 0.0, entry, np.inf)


def _entry_cylinder(o, d, dims):
    r, hh = dims
    ox, oy, oz = o[..., 0], o[..., 1], o[..., 2]
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    cands = []
    a = dx * dx + dy * dy
    b = ox * dx + oy * dy
    c = ox * ox + oy * oy - r * r
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - a * c
        s = np.sqrt(np.maximum(disc, 0.0))
        for sign in (-1.0, 1.0):
            t = (-b + sign * s) / a
            z = oz + t * dz
            ok = (a > 1e-30) & (disc >= 0.0) & (t >= 0.0) & (np.abs(z) <= hh)
            cands.append(np.where(ok, t, np.inf))
        for zcap in (-hh, hh):
            t = (zcap - oz) / dz
            px = ox + t * dx
            py = oy + t * dy
            ok = (np.abs(dz) > 1e-30) & (t >= 0.0) & (px * px + py * py <= r * r)
            cands.append(np.where(ok, t, np.inf))
    return np.min(np.stack(cands, axis=0), axis=0)


_ENTRY = {"box": _entry_box, "sphere": _entry_sphere, "cylinder": _entry_cylinder}


def _prim_entry(prim: _FlatPrim, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    o = (origins - prim.origin) @ prim.rot  # rot is orthonormal; this is R^T applied row-wise
    d = dirs @ prim.rot
    return _ENTRY[prim.variant](o, d, prim.dims)


def _prim_normal_local(prim: _FlatPrim, p: np.ndarray) -> np.ndarray:
    if prim.variant == "sphere":
        return p / math.sqrt(float(p @ p))
    if prim.variant == "box":
        ratios = np.abs(p) / np.asarray(prim.dims)
        axis = int(np.argmax(ratios))
        n = np.zeros(3)
        n[axis] = math.copysign(1.0, p[axis])
        return n
    r, hh = prim.dims
    radial = math.hypot(p[0], p[1])
    if abs(radial - r) <= abs(hh - abs(p[2])):
        if radial < 1e-12:
            return np.array([0.0, 0.0, math.copysign(1.0, p[2])])
        return np.array([p[0] / radial, p[1] / radial, 0.0])
    return np.array([0.0, 0.0, math.copysign(1.0, p[2])])


def ray_cast(ray: Ray, scene: Scene, max_range: float) -> Hit | None:
    """Nearest intersection with any object or the support plane, or None."""
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    best_t = math.inf
    best_prim = None
    for prim in scene._prims():
        t = float(_prim_entry(prim, ray.origin[None, :], ray.direction[None, :])[0])
        if t < best_t:
            best_t = t
            best_prim = prim
    plane_t, plane_n = _plane_hit(ray.origin, ray.direction, scene.support_plane)
    if plane_t < best_t:
        if plane_t > max_range:
            return None
        return Hit(plane_t, plane_n, SUPPORT_PLANE_ID)
    if best_prim is None or best_t > max_range:
        return None
    p_world = ray.origin + best_t * ray.direction
    p_local = best_prim.rot.T @ (p_world - best_prim.origin)
    normal = best_prim.rot @ _prim_normal_local(best_prim, p_local)
    return Hit(best_t, normal, best_prim.object_id)


def _plane_hit(origin, direction, plane_z):
    if plane_z is None:
        return math.inf, None
    oz = float(origin[2]) - plane_z
    dz = float(direction[2])
    if abs(dz) < 1e-30:
        return math.inf, None
    t = -oz / dz
    if t < 0.0:
        return math.inf, None
    normal = np.array([0.0, 0.0, 1.0 if oz > 0 else -1.0])
    return t, normal


def surface_hits(origins: np.ndarray, dirs: np.ndarray, scene: Scene, max_range: float, max_targets: int = 4):
    """First crossings of every distinct surface along each ray, nearest first.

    Returns (distances, reflectances) of shape (n_rays, max_targets), padded
    with inf / 0 past the last surface. Each primitive contributes its first
    crossing only: front faces of things stacked behind each other show up as
    successive targets, the way a multi-target ranging device reports them.
    """
    prims = scene._prims()
    n = origins.shape[0]
    rows_t = []
    rows_r = []
    for prim in prims:
        rows_t.append(_prim_entry(prim, origins, dirs))
        rows_r.append(np.full(n, prim.reflectance))
    if scene.support_plane is not None:
        oz = origins[:, 2] - scene.support_plane
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -oz / dz
        t = np.where((np.abs(dz) > 1e-30) & (t >= 0.0), t, np.inf)
        rows_t.append(t)
        rows_r.append(np.full(n, scene.plane_reflectance))
    if not rows_t:
        return np.full((n, max_targets), np.inf), np.zeros((n, max_targets))
    tmat = np.stack(rows_t, axis=1)  # (n, surfaces)
    rmat = np.stack(rows_r, axis=1)
    tmat = np.where(tmat <= max_range, tmat, np.inf)
    order = np.argsort(tmat, axis=1, kind="stable")
    tsorted = np.take_along_axis(tmat, order, axis=1)
    rsorted = np.take_along_axis(rmat, order, axis=1)
    # merge coincident surfaces (touching faces of adjacent children)
    if tsorted.shape[1] > 1:
        dup = np.zeros_like(tsorted, dtype=bool)
        with np.errstate(invalid="ignore"):
            dup[:, 1:] = np.abs(np.diff(tsorted, axis=1)) <= _COINCIDENT_SURFACE_TOL
        dup &= np.isfinite(tsorted)
        tsorted = np.where(dup, np.inf, tsorted)
        reorder = np.argsort(tsorted, axis=1, kind="stable")
        tsorted = np.take_along_axis(tsorted, reorder, axis=1)
        rsorted = np.take_along_axis(rsorted, reorder, axis=1)
    k = min(max_targets, tsorted.shape[1])
    out_t = np.full((n, max_targets), np.inf)
    out_r = np.zeros((n, max_targets))
    out_t[:, :k] = tsorted[:, :k]
    out_r[:, :k] = np.where(np.isfinite(tsorted[:, :k]), rsorted[:, :k], 0.0)
    return out_t, out_r


# --- signed distance queries (contact detection for the grasp oracle) -------

def _sdf_box(p, dims):
    q = np.abs(p) - np.asarray(dims)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def _sdf_sphere(p, dims):
    return np.linalg.norm(p, axis=-1) - dims[0]


def _sdf_cylinder(p, dims):
    r, hh = dims
    dr = np.hypot(p[..., 0], p[..., 1]) - r
    dz = np.abs(p[..., 2]) - hh
    q = np.stack([dr, dz], axis=-1)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


_SDF = {"box": _sdf_box, "sphere": _sdf_sphere, "cylinder": _sdf_cylinder}


def signed_distance(shape: Shape, pose: Pose, points: np.ndarray) -> np.ndarray:
    """Signed distance from world points to the shape surface (negative inside)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if shape.variant == "composite":
        return np.min(
            np.stack([signed_distance(c, compose(pose, cp), points) for c, cp in shape.children], axis=0),
            axis=0,
        )
    rot = quat_to_matrix(pose.rotation)
    local = (points - pose.translation) @ rot
    return _SDF[shape.variant](local, shape.dims)


def sdf_normal(shape: Shape, pose: Pose, point: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Outward surface normal via central differences of the signed distance."""
    point = np.asarray(point, dtype=float)
    offsets = np.vstack([np.eye(3) * eps, -np.eye(3) * eps])
    d = signed_distance(shape, pose, point + offsets)
    g = np.array([d[0] - d[3], d[1] - d[4], d[2] - d[5]])
    n = np.linalg.norm(g)
    if n < 1e-15:
        return np.array([0.0, 0.0, 1.0])
    return g / n
