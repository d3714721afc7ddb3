"""Shared fixtures and helpers for the warpdiff test suite."""

import numpy as np
import pytest

from warpdiff.geometry import Camera
from warpdiff.images import FeatureImage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_camera(width: int = 16, height: int = 12, *, seed: int | None = None) -> Camera:
    """A small camera; seeded gives a random pose, otherwise a canonical one."""
    if seed is None:
        return Camera.look_at(
            position=np.array([0.0, 0.0, -4.0]),
            target=np.zeros(3),
            up=np.array([0.0, 1.0, 0.0]),
            fx=float(width), fy=float(width),
            cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
            width=width, height=height)
    r = np.random.default_rng(seed)
    position = r.normal(scale=3.0, size=3)
    target = r.normal(scale=0.5, size=3)
    return Camera.look_at(
        position=position, target=target, up=np.array([0.0, 1.0, 0.0]),
        fx=float(width) * r.uniform(0.8, 1.5), fy=float(width) * r.uniform(0.8, 1.5),
        cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
        width=width, height=height)


def random_image(r: np.random.Generator, height: int, width: int,
                 channels: int = 3) -> FeatureImage:
    return FeatureImage(r.uniform(0.0, 1.0, size=(height, width, channels)))
