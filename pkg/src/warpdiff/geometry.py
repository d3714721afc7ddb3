"""Pinhole cameras, point clouds, ray maps, and z-buffered feature splatting.

Conventions (also in the README):

* World-to-camera: ``x_cam = R @ x_world + t``.
* Camera axes: x right, y down, z forward (looking direction is +z).
* Pixel (u, v) = (column, row); pixel centers sit at integer coordinates,
  so ``u = fx * X / Z + cx`` lands exactly on column ``cx`` for an on-axis
  point.
* Splatting writes each point to its nearest pixel (round half up); at
  equal depth the lowest point index wins.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from warpdiff import native
from warpdiff.images import FeatureImage, RenderMask


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics plus a world-to-camera rigid pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be at least 1x1, got {self.width}x{self.height}")
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        if not (np.isfinite(t).all() and np.isfinite([self.fx, self.fy, self.cx, self.cy]).all()):
            raise ValueError("camera parameters must be finite")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates, -R^T t."""
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, position, target, up, fx, fy, cx, cy, width, height) -> "Camera":
        """Camera at ``position`` with +z toward ``target`` and image-up along ``up``."""
        position = np.asarray(position, dtype=np.float64)
        z_axis = np.asarray(target, dtype=np.float64) - position
        nz = np.linalg.norm(z_axis)
        if nz < 1e-12:
            raise ValueError("look_at target coincides with camera position")
        z_axis = z_axis / nz
        # Camera y points opposite world-up so images come out upright.
        y_axis = -np.asarray(up, dtype=np.float64)
        y_axis = y_axis - (y_axis @ z_axis) * z_axis
        ny = np.linalg.norm(y_axis)
        if ny < 1e-12:
            raise ValueError("up direction is parallel to the viewing direction")
        y_axis = y_axis / ny
        x_axis = np.cross(y_axis, z_axis)
        rotation = np.stack([x_axis, y_axis, z_axis])
        return cls(fx, fy, cx, cy, width, height, rotation, -rotation @ position)

    def with_world_transform(self, rotation, translation) -> "Camera":
        """The same view of a world rigidly moved by x -> Q x + b.

        Composing with the inverse transform keeps every projected pixel
        fixed: R' = R Q^T, t' = t - R Q^T b.
        """
        q = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        b = np.asarray(translation, dtype=np.float64).reshape(3)
        new_rot = self.rotation @ q.T
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                      new_rot, self.translation - new_rot @ b)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]),
                   np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
                   np.asarray(d["translation"], dtype=np.float64))


def write_trajectory(path, cameras) -> None:
    """Write a list of cameras as a JSON array."""
    with open(path, "w") as f:
        json.dump([cam.to_dict() for cam in cameras], f, indent=2)
        f.write("\n")


def read_trajectory(path) -> list:
    entries = json.loads(Path(path).read_text())
    if not isinstance(entries, list):
        raise ValueError(f"{path}: trajectory file must contain a JSON array")
    return [Camera.from_dict(d) for d in entries]


@dataclass(frozen=True)
class FeaturePointCloud:
    """N world-space points, each carrying a C-vector of features."""

    positions: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        feat = np.asarray(self.features, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if feat.ndim != 2 or feat.shape[0] != pos.shape[0]:
            raise ValueError(
                f"features must be (N, C) matching positions, got {feat.shape} vs {pos.shape}")
        if feat.shape[1] < 1:
            raise ValueError("feature dimension must be at least 1")
        if not (np.isfinite(pos).all() and np.isfinite(feat).all()):
            raise ValueError("point cloud contains non-finite values")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feat)

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    @classmethod
    def empty(cls, channels: int) -> "FeaturePointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, channels)))


def _project_raw(cloud: FeaturePointCloud, cam: Camera):
    """Unfiltered pinhole projection: (uv (N, 2), depth (N,))."""
    x_cam = cloud.positions @ cam.rotation.T + cam.translation
    depth = x_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * x_cam[:, 0] / depth + cam.cx
        v = cam.fy * x_cam[:, 1] / depth + cam.cy
    return np.stack([u, v], axis=1), depth


def project_points(cloud: FeaturePointCloud, cam: Camera):
    """Project points into a camera, keeping those that land on the image.

    Returns (uv (M, 2), depth (M,), point_index (M,) int64) for the points
    with depth > 0 and continuous pixel coordinates inside
    [0, width) x [0, height).
    """
    uv, depth = _project_raw(cloud, cam)
    keep = (depth > 0.0)
    keep &= (uv[:, 0] >= 0.0) & (uv[:, 0] < cam.width)
    keep &= (uv[:, 1] >= 0.0) & (uv[:, 1] < cam.height)
    idx = np.nonzero(keep)[0].astype(np.int64)
    return uv[keep], depth[keep], idx


def splat_features(cloud: FeaturePointCloud, cam: Camera):
    """Z-buffered nearest-pixel splat of point features into a camera.

    Each point with depth > 0 whose rounded pixel (round half up) lies on
    the image writes its features there; the smallest depth per pixel wins,
    ties going to the lowest point index.  Returns (features, mask, depth)
    where unwritten pixels hold zero features, mask 0 and depth +inf.

    The in-bounds test here uses the rounded pixel, so a point at u = -0.3
    participates (nearest pixel 0) even though project_points would drop it.
    """
    uv, depth = _project_raw(cloud, cam)
    front = depth > 0.0
    cols = np.floor(uv[:, 0] + 0.5)
    rows = np.floor(uv[:, 1] + 0.5)
    keep = front & (cols >= 0) & (cols < cam.width) & (rows >= 0) & (rows < cam.height)

    # Boolean indexing preserves order, so position within the filtered
    # arrays still sorts by original point index and the kernels' tie-break
    # applies to the original indices.
    feat, mask, depth_img = native.splat_zbuffer(
        np.ascontiguousarray(rows[keep], dtype=np.int64),
        np.ascontiguousarray(cols[keep], dtype=np.int64),
        np.ascontiguousarray(depth[keep], dtype=np.float64),
        np.ascontiguousarray(cloud.features[keep], dtype=np.float64),
        cam.height, cam.width)
    return FeatureImage(feat), RenderMask(mask), FeatureImage(depth_img[:, :, None])


def _pixel_dirs_cam(cam: Camera) -> np.ndarray:
    """Camera-frame ray directions through all pixel centers, z = 1."""
    jj, ii = np.meshgrid(np.arange(cam.width, dtype=np.float64),
                         np.arange(cam.height, dtype=np.float64))
    return np.stack([(jj - cam.cx) / cam.fx, (ii - cam.cy) / cam.fy,
                     np.ones_like(jj)], axis=-1)


def plucker_ray_map(cam: Camera) -> FeatureImage:
    """Per-pixel world-space rays as 6 channels (direction, moment).

    The direction d is unit norm; the moment is m = o x d with o the camera
    center, so d . m = 0 everywhere.
    """
    dirs = _pixel_dirs_cam(cam) @ cam.rotation
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    moments = np.cross(np.broadcast_to(cam.center, dirs.shape), dirs)
    return FeatureImage(np.concatenate([dirs, moments], axis=-1))


def lift_view(image: FeatureImage, depth: FeatureImage, cam: Camera) -> FeaturePointCloud:
    """Unproject each finite-depth pixel to a world point with its features.

    Points come out in raster order.  Depth must be a C=1 image; +inf marks
    pixels to skip, and finite depths must be positive.
    """
    if depth.channels != 1:
        raise ValueError(f"depth image must have 1 channel, got {depth.channels}")
    if (image.height, image.width) != (depth.height, depth.width):
        raise ValueError(
            f"image size {image.height}x{image.width} does not match "
            f"depth size {depth.height}x{depth.width}")
    if (image.height, image.width) != (cam.height, cam.width):
        raise ValueError(
            f"image size {image.height}x{image.width} does not match "
            f"camera size {cam.height}x{cam.width}")
    z = depth.data[:, :, 0]
    finite = np.isfinite(z)
    if (z[finite] <= 0.0).any():
        raise ValueError("finite depths must be positive")
    x_cam = _pixel_dirs_cam(cam)[finite] * z[finite][:, None]
    positions = (x_cam - cam.translation) @ cam.rotation
    return FeaturePointCloud(positions, image.data[finite])


def write_ply(path, cloud: FeaturePointCloud) -> None:
    """Write a point cloud as binary little-endian PLY (x, y, z, f0..f{C-1})."""
    c = cloud.channels
    props = "\n".join(f"property float f{k}" for k in range(c))
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {cloud.size}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        f"{props}\n"
        "end_header\n")
    payload = np.hstack([cloud.positions, cloud.features]).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(payload)


def read_ply(path) -> FeaturePointCloud:
    """Read a point cloud written by :func:`write_ply`."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    lines = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in lines:
        raise ValueError(f"{path}: expected binary little-endian PLY")
    n = None
    names = []
    for line in lines:
        if line.startswith("element vertex "):
            n = int(line.split()[-1])
        elif line.startswith("property float "):
            names.append(line.split()[-1])
        elif line.startswith("element ") and n is not None:
            raise ValueError(f"{path}: only vertex elements are supported")
    if n is None or names[:3] != ["x", "y", "z"]:
        raise ValueError(f"{path}: missing vertex element or x/y/z properties")
    c = len(names) - 3
    if c < 1 or names[3:] != [f"f{k}" for k in range(c)]:
        raise ValueError(f"{path}: feature properties must be named f0..f{c - 1}")
    body = raw[end + len(b"end_header\n"):]
    expected = n * (3 + c) * 4
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, got {len(body)}")
    table = np.frombuffer(body, dtype="<f4").reshape(n, 3 + c).astype(np.float64)
    return FeaturePointCloud(table[:, :3], table[:, 3:])
