"""Semantic feature extraction, channel projection, and mask fusion.

A feature extractor maps an RGB image to a same-size C_feat-channel map.
The default is a bank of fixed seeded convolution kernels: cheap, fully
deterministic, and informative enough that conditioning on its features
carries more signal than raw warped RGB (each output pixel summarizes a
3x3 neighborhood).  Real features exported from elsewhere can be injected
through :class:`PrecomputedExtractor` without adding a model runtime.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from warpdiff.images import FeatureImage, RenderMask, read_fimg


class FeatureExtractor(abc.ABC):
    """Maps an H x W x 3 RGB image to an H x W x C_feat feature map."""

    @property
    @abc.abstractmethod
    def channels(self) -> int:
        """Output feature dimension C_feat."""

    @abc.abstractmethod
    def extract(self, image: FeatureImage) -> FeatureImage:
        """Deterministic feature map at the input's spatial size."""


def _check_rgb(image: FeatureImage) -> None:
    if image.channels != 3:
        raise ValueError(f"extractor expects 3 channels, got {image.channels}")
    if not np.isfinite(image.data).all():
        raise ValueError("extractor input must be finite")


class ToyExtractor(FeatureExtractor):
    """K fixed seeded 3x3x3 convolution kernels, replicate-edge padded.

    Kernels are drawn once from a seeded generator with scale 1/sqrt(27)
    (unit-variance response to unit-variance input), so the same seed gives
    byte-identical feature maps on every run.
    """

    def __init__(self, seed: int = 0, channels: int = 48):
        if channels < 1:
            raise ValueError("channel count must be positive")
        self._channels = channels
        # (k, di, dj, c) taps; correlation, no kernel flip.
        self.kernel_bank = np.random.default_rng(seed).normal(
            scale=1.0 / np.sqrt(27.0), size=(channels, 3, 3, 3))

    @property
    def channels(self) -> int:
        return self._channels

    def extract(self, image: FeatureImage) -> FeatureImage:
        _check_rgb(image)
        padded = np.pad(image.data, ((1, 1), (1, 1), (0, 0)), mode="edge")
        windows = sliding_window_view(padded, (3, 3), axis=(0, 1))  # (H, W, c, di, dj)
        return FeatureImage(np.einsum("hwcij,kijc->hwk", windows, self.kernel_bank))


class PrecomputedExtractor(FeatureExtractor):
    """Serves one feature map loaded from an FIMG file.

    Stands in for features computed offline by a real backbone: every call
    returns the preloaded map (input RGB only size-checked), so it is valid
    for the single view the file was exported from.
    """

    def __init__(self, path):
        self.feature_map = read_fimg(path)

    @property
    def channels(self) -> int:
        return self.feature_map.channels

    def extract(self, image: FeatureImage) -> FeatureImage:
        _check_rgb(image)
        if (image.height, image.width) != (self.feature_map.height, self.feature_map.width):
            raise ValueError(
                f"input size {image.height}x{image.width} does not match precomputed "
                f"map {self.feature_map.height}x{self.feature_map.width}")
        return self.feature_map


@dataclass(frozen=True)
class ChannelProjector:
    """Linear map reducing C_feat feature channels to C' < C_feat."""

    weight: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"weight must be (C_feat, C'), got shape {w.shape}")
        if w.shape[1] >= w.shape[0]:
            raise ValueError(f"projection must reduce dimension, got {w.shape[0]} -> {w.shape[1]}")
        if not np.isfinite(w).all():
            raise ValueError("weight must be finite")
        object.__setattr__(self, "weight", w)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def seeded(cls, in_channels: int, out_channels: int = 32, seed: int = 0) -> "ChannelProjector":
        """Gaussian init at scale 1/sqrt(C_feat)."""
        w = np.random.default_rng(seed).normal(
            scale=1.0 / np.sqrt(in_channels), size=(in_channels, out_channels))
        return cls(w)

    def with_weight(self, weight: np.ndarray) -> "ChannelProjector":
        return ChannelProjector(weight)


# Pixels whose feature vector is below this norm (unwritten splat regions
# are exactly zero) project to the zero vector instead of dividing.
ZERO_NORM_GUARD = 1e-12


def normalize_project(feat: FeatureImage, proj: ChannelProjector) -> FeatureImage:
    """Per-pixel l2 channel normalization followed by the linear projection."""
    if feat.channels != proj.in_channels:
        raise ValueError(f"feature channels {feat.channels} do not match "
                         f"projector input {proj.in_channels}")
    norms = np.linalg.norm(feat.data, axis=-1, keepdims=True)
    unit = np.where(norms < ZERO_NORM_GUARD, 0.0,
                    feat.data / np.maximum(norms, ZERO_NORM_GUARD))
    return FeatureImage(unit @ proj.weight)


def fuse_features(warped: FeatureImage, iterative: FeatureImage, mask: RenderMask) -> FeatureImage:
    """Per-pixel select: warped where mask=1, iterative where mask=0."""
    if warped.data.shape != iterative.data.shape:
        raise ValueError(f"shape mismatch: warped {warped.data.shape} "
                         f"vs iterative {iterative.data.shape}")
    if not mask.same_shape(warped):
        raise ValueError(f"mask size {mask.height}x{mask.width} does not match "
                         f"images {warped.height}x{warped.width}")
    return FeatureImage(np.where(mask.data[:, :, None] == 1.0, warped.data, iterative.data))
