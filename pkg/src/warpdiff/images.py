"""Dense image grids and their file formats.

Two array wrappers are used throughout the package:

* :class:`FeatureImage` -- an H x W x C grid of float64 scalars.  The same
  type carries RGB images (C=3), ray maps (C=6), semantic feature maps and
  single-channel depth maps (C=1, where +inf marks "no surface").
* :class:`RenderMask` -- an H x W binary coverage mask.

Both are treated as immutable after construction; operations return new
instances.

On disk, feature tensors use the FIMG format: magic bytes ``FIMG``, then
u32 height, u32 width, u32 channels (little-endian), then H*W*C float32
little-endian values in row-major, channel-fastest order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

FIMG_MAGIC = b"FIMG"


@dataclass(frozen=True)
class FeatureImage:
    """An H x W x C grid of scalars (float64).

    NaN and -inf are rejected.  +inf is allowed so the type can carry depth
    maps with a "no surface" sentinel.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"expected (H, W, C) array, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dimensions must be positive, got {arr.shape}")
        if np.isnan(arr).any() or np.isneginf(arr).any():
            raise ValueError("image contains NaN or -inf")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, height: int, width: int, channels: int) -> "FeatureImage":
        return cls(np.zeros((height, width, channels)))

    @classmethod
    def from_planes(cls, *planes: np.ndarray) -> "FeatureImage":
        """Stack H x W planes into an H x W x len(planes) image."""
        return cls(np.stack(planes, axis=-1))


@dataclass(frozen=True)
class RenderMask:
    """Binary H x W coverage mask (stored as float64 0.0 / 1.0)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected (H, W) array, got shape {arr.shape}")
        if not np.isin(arr, (0.0, 1.0)).all():
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, height: int, width: int) -> "RenderMask":
        return cls(np.zeros((height, width)))

    @classmethod
    def ones(cls, height: int, width: int) -> "RenderMask":
        return cls(np.ones((height, width)))

    def same_shape(self, img: FeatureImage) -> bool:
        return (self.height, self.width) == (img.height, img.width)


def write_fimg(path, image: FeatureImage) -> None:
    """Serialize a FeatureImage to the FIMG binary format."""
    h, w, c = image.data.shape
    payload = image.data.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(FIMG_MAGIC)
        f.write(struct.pack("<III", h, w, c))
        f.write(payload)


def read_fimg(path) -> FeatureImage:
    """Load a FeatureImage from an FIMG file."""
    raw = Path(path).read_bytes()
    if raw[:4] != FIMG_MAGIC:
        raise ValueError(f"{path}: not an FIMG file (bad magic {raw[:4]!r})")
    h, w, c = struct.unpack("<III", raw[4:16])
    expected = 16 + h * w * c * 4
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated FIMG, expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w, c)
    return FeatureImage(data.astype(np.float64))


def write_png(path, image: FeatureImage) -> None:
    """Write an RGB image (values clamped to [0, 1]) as an 8-bit PNG."""
    if image.channels != 3:
        raise ValueError(f"PNG output expects 3 channels, got {image.channels}")
    arr = np.clip(image.data, 0.0, 1.0)
    quantized = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


def read_png(path) -> FeatureImage:
    """Load an 8-bit RGB PNG as a FeatureImage with values in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return FeatureImage(arr)
