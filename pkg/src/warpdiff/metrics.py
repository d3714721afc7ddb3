"""Evaluation metrics for generated view sequences.

Image quality is a reference-free sharpness score (mean gradient
magnitude); temporal drift compares that score between the first and last
15% of a video's frames.  Camera accuracy uses geodesic rotation error and
Euclidean translation error after aligning a pose sequence to its first
frame and normalizing translation scale.  PSNR/SSIM cover cross-view
fidelity against ground-truth renders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from warpdiff.images import FeatureImage

_ORTHO_TOL = 1e-6
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class VideoFrames:
    """An ordered, uniform-resolution RGB frame sequence (length >= 2)."""

    frames: tuple

    def __init__(self, frames):
        frames = tuple(frames)
        if len(frames) < 2:
            raise ValueError(f"need at least 2 frames, got {len(frames)}")
        shape = None
        for i, frame in enumerate(frames):
            if not isinstance(frame, FeatureImage):
                raise TypeError(f"frame {i} is {type(frame).__name__}, not FeatureImage")
            if frame.channels != 3:
                raise ValueError(f"frame {i} has {frame.channels} channels, want 3")
            if not np.all(np.isfinite(frame.data)):
                raise ValueError(f"frame {i} contains non-finite values")
            if shape is None:
                shape = frame.data.shape
            elif frame.data.shape != shape:
                raise ValueError(f"frame {i} shape {frame.data.shape} != frame 0 "
                                 f"shape {shape}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)


def _check_rotation(r: np.ndarray, label: str) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError(f"{label} must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError(f"{label} contains non-finite values")
    if np.max(np.abs(r @ r.T - np.eye(3))) > _ORTHO_TOL:
        raise ValueError(f"{label} is not orthonormal within {_ORTHO_TOL}")
    if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
        raise ValueError(f"{label} determinant is not +1 within {_ORTHO_TOL}")
    return r


@dataclass(frozen=True)
class PoseSequence:
    """Paired rotation/translation lists describing camera extrinsics."""

    rotations: tuple
    translations: tuple

    def __init__(self, rotations, translations):
        rotations = tuple(_check_rotation(r, f"rotation {i}")
                          for i, r in enumerate(rotations))
        trans = []
        for i, t in enumerate(translations):
            t = np.asarray(t, dtype=np.float64)
            if t.shape != (3,):
                raise ValueError(f"translation {i} must be a 3-vector, got {t.shape}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"translation {i} contains non-finite values")
            trans.append(t)
        if len(rotations) != len(trans):
            raise ValueError(f"{len(rotations)} rotations vs {len(trans)} translations")
        object.__setattr__(self, "rotations", rotations)
        object.__setattr__(self, "translations", tuple(trans))

    def __len__(self) -> int:
        return len(self.rotations)


# ---------------------------------------------------------------------------
# Reference-free image quality and temporal drift


def frame_quality(img: FeatureImage) -> float:
    """Mean gradient-magnitude sharpness; 0 for constant images.

    Homogeneous of degree 1: scaling the image scales the score.
    """
    if img.channels != 3:
        raise ValueError(f"expected 3 channels, got {img.channels}")
    data = img.data
    gy = np.zeros_like(data)
    gx = np.zeros_like(data)
    if data.shape[0] >= 2:
        gy = np.gradient(data, axis=0)
    if data.shape[1] >= 2:
        gx = np.gradient(data, axis=1)
    return float(np.mean(np.sqrt(gx * gx + gy * gy)))


def video_quality(video: VideoFrames) -> float:
    """Arithmetic mean of frame_quality over all frames."""
    return float(np.mean([frame_quality(f) for f in video.frames]))


def drift_slices(frame_count: int) -> tuple[slice, slice]:
    """Head/tail 15% slices (0-based) used by quality_drift.

    Head covers frames 1..floor(0.15 T) and tail covers ceil(0.85 T)..T in
    1-based terms; both are forced to hold at least one frame, and for
    some T they differ in length (T=100 gives 15 head vs 16 tail frames).
    """
    if frame_count < 2:
        raise ValueError("need at least 2 frames")
    head_end = max(1, math.floor(0.15 * frame_count))
    tail_start = min(frame_count, math.ceil(0.85 * frame_count))
    return slice(0, head_end), slice(tail_start - 1, frame_count)


def quality_drift(video: VideoFrames) -> float:
    """|mean head quality - mean tail quality| over the 15% end slices."""
    qualities = [frame_quality(f) for f in video.frames]
    head, tail = drift_slices(len(qualities))
    return abs(float(np.mean(qualities[head])) - float(np.mean(qualities[tail])))


# ---------------------------------------------------------------------------
# Camera pose accuracy


def align_poses(seq: PoseSequence) -> PoseSequence:
    """Express poses relative to frame 0 and normalize translation scale.

    Frame 0 becomes exactly (identity, zero); every pose is composed with
    the inverse of frame 0; translations are divided by the largest
    translation norm.  If that largest norm is below 1e-12 the
    translations are left at zero.  Idempotent, and invariant under a
    rigid world transform applied to the whole sequence.
    """
    if len(seq) < 2:
        raise ValueError("need at least 2 poses")
    r0, t0 = seq.rotations[0], seq.translations[0]
    rels = []
    trans = []
    for r, t in zip(seq.rotations, seq.translations):
        r_rel = r @ r0.T
        rels.append(r_rel)
        trans.append(t - r_rel @ t0)
    rels[0] = np.eye(3)
    trans[0] = np.zeros(3)
    scale = max(float(np.linalg.norm(t)) for t in trans)
    if scale < 1e-12:
        trans = [np.zeros(3) for _ in trans]
    else:
        trans = [t / scale for t in trans]
    return PoseSequence(rels, trans)


def rotation_error(r_gen: np.ndarray, r_gt: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees within [0, 180]."""
    r_gen = _check_rotation(r_gen, "r_gen")
    r_gt = _check_rotation(r_gt, "r_gt")
    if np.array_equal(r_gen, r_gt):
        # arccos is ill-conditioned at 0; identical inputs deserve exactly 0.
        return 0.0
    cos = (np.trace(r_gen @ r_gt.T) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


def translation_error(t_gen: np.ndarray, t_gt: np.ndarray) -> float:
    """Euclidean distance between two translations."""
    t_gen = np.asarray(t_gen, dtype=np.float64)
    t_gt = np.asarray(t_gt, dtype=np.float64)
    if t_gen.shape != (3,) or t_gt.shape != (3,):
        raise ValueError("translations must be 3-vectors")
    if not (np.all(np.isfinite(t_gen)) and np.all(np.isfinite(t_gt))):
        raise ValueError("translations must be finite")
    return float(np.linalg.norm(t_gt - t_gen))


def pose_errors(gen: PoseSequence, gt: PoseSequence) -> tuple[list, list]:
    """Per-frame (rotation degrees, translation distance) after alignment."""
    if len(gen) != len(gt):
        raise ValueError(f"pose counts differ: {len(gen)} vs {len(gt)}")
    gen = align_poses(gen)
    gt = align_poses(gt)
    re = [rotation_error(rg, rt) for rg, rt in zip(gen.rotations, gt.rotations)]
    te = [translation_error(tg, tt) for tg, tt in zip(gen.translations, gt.translations)]
    return re, te


# ---------------------------------------------------------------------------
# Full-reference fidelity


def _check_pair(a: FeatureImage, b: FeatureImage) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    for label, img in (("first", a), ("second", b)):
        if img.data.min() < 0.0 or img.data.max() > 1.0:
            raise ValueError(f"{label} image has values outside [0, 1]")


def psnr(a: FeatureImage, b: FeatureImage) -> float:
    """10 log10(1 / MSE) for [0,1] images, capped at 100 dB when MSE < 1e-10."""
    _check_pair(a, b)
    diff = a.data - b.data
    mse = float(np.mean(diff * diff))
    if mse < 1e-10:
        return 100.0
    return 10.0 * math.log10(1.0 / mse)


def _ssim_window() -> np.ndarray:
    offsets = np.arange(_SSIM_WINDOW, dtype=np.float64) - (_SSIM_WINDOW - 1) / 2.0
    w = np.exp(-(offsets ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    return w / w.sum()


def _local_mean(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    half = _SSIM_WINDOW // 2
    out = correlate1d(plane, window, axis=0, mode="constant")
    out = correlate1d(out, window, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a: FeatureImage, b: FeatureImage) -> float:
    """Structural similarity with an 11x11 sigma-1.5 Gaussian window.

    Statistics are taken over the valid (fully-windowed) interior and
    averaged across channels; inputs must be at least 11x11.
    """
    _check_pair(a, b)
    h, w = a.data.shape[:2]
    if h < _SSIM_WINDOW or w < _SSIM_WINDOW:
        raise ValueError(f"images must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW}, "
                         f"got {h}x{w}")
    window = _ssim_window()
    scores = []
    for c in range(a.data.shape[2]):
        x = a.data[:, :, c]
        y = b.data[:, :, c]
        mu_x = _local_mean(x, window)
        mu_y = _local_mean(y, window)
        var_x = _local_mean(x * x, window) - mu_x * mu_x
        var_y = _local_mean(y * y, window) - mu_y * mu_y
        cov = _local_mean(x * y, window) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))
