"""Procedural synthetic scenes, a ground-truth renderer, and trajectories.

Scenes are unions of colored spheres and axis-aligned boxes with flat
(Lambertian, unlit) shading, so a surface point has the same color from
every viewpoint and warped-RGB comparisons can be exact.  Rendering is a
per-pixel ray cast returning albedo, camera-frame z depth (+inf on miss)
and the hit primitive's index (-1 on miss).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from warpdiff import native
from warpdiff.geometry import Camera, _pixel_dirs_cam
from warpdiff.images import FeatureImage

TRAJECTORY_KINDS = ("orbit", "dolly-forward", "lateral")


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        albedo = np.asarray(self.albedo, dtype=np.float64).reshape(3)
        if not (np.isfinite(center).all() and np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("sphere geometry must be finite with positive radius")
        if ((albedo < 0) | (albedo > 1)).any():
            raise ValueError("albedo must lie in [0, 1]")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "albedo", albedo)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its center and per-axis half extents."""

    center: np.ndarray
    half_size: np.ndarray
    albedo: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        half = np.asarray(self.half_size, dtype=np.float64).reshape(3)
        albedo = np.asarray(self.albedo, dtype=np.float64).reshape(3)
        if not (np.isfinite(center).all() and np.isfinite(half).all() and (half > 0).all()):
            raise ValueError("box geometry must be finite with positive extents")
        if ((albedo < 0) | (albedo > 1)).any():
            raise ValueError("albedo must lie in [0, 1]")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_size", half)
        object.__setattr__(self, "albedo", albedo)


@dataclass(frozen=True)
class SceneSpec:
    """A renderable scene: at least one primitive plus a background color."""

    seed: int
    primitives: tuple
    background: np.ndarray

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise ValueError("a scene needs at least one primitive")
        for p in prims:
            if not isinstance(p, (Sphere, Box)):
                raise TypeError(f"unsupported primitive type {type(p).__name__}")
        background = np.asarray(self.background, dtype=np.float64).reshape(3)
        if ((background < 0) | (background > 1)).any():
            raise ValueError("background must lie in [0, 1]")
        object.__setattr__(self, "primitives", prims)
        object.__setattr__(self, "background", background)

    def to_dict(self) -> dict:
        prims = []
        for p in self.primitives:
            if isinstance(p, Sphere):
                prims.append({"type": "sphere", "center": list(p.center),
                              "radius": p.radius, "albedo": list(p.albedo)})
            else:
                prims.append({"type": "box", "center": list(p.center),
                              "half_size": list(p.half_size), "albedo": list(p.albedo)})
        return {"seed": self.seed, "background": list(self.background), "primitives": prims}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        prims = []
        for p in d["primitives"]:
            if p["type"] == "sphere":
                prims.append(Sphere(p["center"], p["radius"], p["albedo"]))
            elif p["type"] == "box":
                prims.append(Box(p["center"], p["half_size"], p["albedo"]))
            else:
                raise ValueError(f"unknown primitive type {p['type']!r}")
        return cls(int(d["seed"]), tuple(prims), d["background"])


def write_scene(path, spec: SceneSpec) -> None:
    with open(path, "w") as f:
        json.dump(spec.to_dict(), f, indent=2)
        f.write("\n")


def read_scene(path) -> SceneSpec:
    return SceneSpec.from_dict(json.loads(Path(path).read_text()))


def _gather(spec: SceneSpec):
    """Split primitives into the flat arrays the ray-cast kernels take.

    Primitive ids are indices into spec.primitives, so they are unique; the
    kernels rely on that when resolving hit colors.
    """
    spheres = [(i, p) for i, p in enumerate(spec.primitives) if isinstance(p, Sphere)]
    boxes = [(i, p) for i, p in enumerate(spec.primitives) if isinstance(p, Box)]
    s_centers = np.array([p.center for _, p in spheres]).reshape(-1, 3)
    s_radii = np.array([p.radius for _, p in spheres], dtype=np.float64)
    s_albedos = np.array([p.albedo for _, p in spheres]).reshape(-1, 3)
    s_ids = np.array([i for i, _ in spheres], dtype=np.int64)
    b_los = np.array([p.center - p.half_size for _, p in boxes]).reshape(-1, 3)
    b_his = np.array([p.center + p.half_size for _, p in boxes]).reshape(-1, 3)
    b_albedos = np.array([p.albedo for _, p in boxes]).reshape(-1, 3)
    b_ids = np.array([i for i, _ in boxes], dtype=np.int64)
    return s_centers, s_radii, s_albedos, s_ids, b_los, b_his, b_albedos, b_ids


def render_scene_ids(spec: SceneSpec, cam: Camera):
    """Render albedo, depth, and hit-primitive indices.

    Returns (rgb: FeatureImage C=3, depth: FeatureImage C=1, hit_id: (H, W)
    int64 array with -1 on background).  Ray directions are scaled so depth
    is camera-frame z, matching what splatting and lifting use.
    """
    dirs = np.ascontiguousarray(_pixel_dirs_cam(cam) @ cam.rotation)
    arrays = _gather(spec)
    rgb, depth, hit_id = native.raycast(
        np.ascontiguousarray(cam.center), dirs,
        *[np.ascontiguousarray(a) for a in arrays],
        np.ascontiguousarray(spec.background))
    return FeatureImage(rgb), FeatureImage(depth[:, :, None]), hit_id


def render_scene(spec: SceneSpec, cam: Camera):
    """Render a scene to (rgb, depth); see :func:`render_scene_ids`."""
    rgb, depth, _ = render_scene_ids(spec, cam)
    return rgb, depth


@dataclass(frozen=True)
class TrajectorySpec:
    """Camera path parameters; only the fields for ``kind`` are used.

    orbit: circle of ``orbit_radius`` around the point that far ahead of the
    base camera, sweeping ``orbit_span_deg`` degrees about the camera's up
    axis.  dolly-forward: advance ``dolly_distance`` along the viewing axis.
    lateral: slide ``lateral_span`` along the camera's x axis.
    """

    kind: str
    frame_count: int
    orbit_radius: float = 4.0
    orbit_span_deg: float = 90.0
    dolly_distance: float = 1.0
    lateral_span: float = 1.0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}, "
                             f"expected one of {TRAJECTORY_KINDS}")
        if self.frame_count < 2:
            raise ValueError(f"frame_count must be at least 2, got {self.frame_count}")
        if self.kind == "orbit" and self.orbit_radius <= 0:
            raise ValueError("orbit_radius must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "frame_count": self.frame_count,
                "orbit_radius": self.orbit_radius, "orbit_span_deg": self.orbit_span_deg,
                "dolly_distance": self.dolly_distance, "lateral_span": self.lateral_span}

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectorySpec":
        return cls(d["kind"], int(d["frame_count"]),
                   d.get("orbit_radius", 4.0), d.get("orbit_span_deg", 90.0),
                   d.get("dolly_distance", 1.0), d.get("lateral_span", 1.0))


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def make_trajectory(spec: TrajectorySpec, base_cam: Camera) -> list:
    """Generate spec.frame_count cameras; frame 0 is base_cam exactly."""
    n = spec.frame_count
    center = base_cam.center
    # Rows of the rotation are the camera axes expressed in world space.
    x_axis, y_axis, z_axis = base_cam.rotation
    fracs = [i / (n - 1) for i in range(n)]

    if spec.kind == "orbit":
        pivot = center + spec.orbit_radius * z_axis
        up = -y_axis
        cams = []
        for f in fracs:
            angle = math.radians(spec.orbit_span_deg * f)
            if angle == 0.0:
                # Exact reuse: recomputing via look_at would round.
                cams.append(base_cam)
                continue
            pos = pivot + _axis_rotation(up, angle) @ (center - pivot)
            cams.append(Camera.look_at(pos, pivot, up, base_cam.fx, base_cam.fy,
                                       base_cam.cx, base_cam.cy,
                                       base_cam.width, base_cam.height))
        return cams

    if spec.kind == "dolly-forward":
        offsets = [f * spec.dolly_distance * z_axis for f in fracs]
    else:
        offsets = [f * spec.lateral_span * x_axis for f in fracs]
    cams = [base_cam]
    for off in offsets[1:]:
        cams.append(Camera(base_cam.fx, base_cam.fy, base_cam.cx, base_cam.cy,
                           base_cam.width, base_cam.height, base_cam.rotation,
                           -base_cam.rotation @ (center + off)))
    return cams


def random_scene(seed: int) -> SceneSpec:
    """Procedural scene: 3-8 primitives with sizes 0.2-1.5 world units.

    Centers fall in [-1.5, 1.5]^3 and albedos in [0.05, 0.95] (kept off the
    exact 0/1 endpoints so quantization clipping cannot alias colors).
    Deterministic in the seed.
    """
    rng = np.random.default_rng(seed)
    count = int(rng.integers(3, 9))
    prims = []
    for _ in range(count):
        center = rng.uniform(-1.5, 1.5, size=3)
        albedo = rng.uniform(0.05, 0.95, size=3)
        if rng.uniform() < 0.5:
            # Size is the diameter so both primitive kinds share the range.
            prims.append(Sphere(center, rng.uniform(0.2, 1.5) / 2.0, albedo))
        else:
            prims.append(Box(center, rng.uniform(0.2, 1.5, size=3) / 2.0, albedo))
    return SceneSpec(seed, tuple(prims), rng.uniform(0.05, 0.95, size=3))


def room_scene(seed: int, *, half_size: float = 25.0) -> SceneSpec:
    """A random_scene enclosed in a large box viewed from inside.

    The box's interior faces give every pixel finite depth, so the
    background itself lifts to geometry and warps between views; with the
    open background of random_scene only object pixels ever carry warped
    content.  The enclosure is appended last so foreground primitives win
    z-buffer index ties.
    """
    base = random_scene(seed)
    rng = np.random.default_rng(np.random.PCG64(seed).jumped(1))
    room = Box(np.zeros(3), np.full(3, half_size), rng.uniform(0.05, 0.95, size=3))
    return SceneSpec(seed, base.primitives + (room,), base.background)


def random_base_camera(seed: int, width: int = 64, height: int = 64) -> Camera:
    """A camera 3-8 units from the origin, looking at the origin.

    Elevation stays within +-35 degrees so the up vector never degenerates.
    """
    rng = np.random.default_rng(seed)
    distance = rng.uniform(3.0, 8.0)
    azimuth = rng.uniform(0.0, 2.0 * math.pi)
    elevation = rng.uniform(math.radians(-35.0), math.radians(35.0))
    pos = distance * np.array([math.cos(elevation) * math.cos(azimuth),
                               math.sin(elevation),
                               math.cos(elevation) * math.sin(azimuth)])
    return Camera.look_at(pos, (0.0, 0.0, 0.0), (0.0, 1.0, 0.0),
                          fx=float(width), fy=float(width),
                          cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                          width=width, height=height)
