"""A tiny trainable conditional denoiser and its training procedure.

The denoiser is a 3-layer convolutional network over the channel stack
[x * c_in | conditioning layout | noise-level plane], predicting the noise
content of x.  Forward and reverse passes are plain numpy (im2col plus
matmul); correctness is anchored by a finite-difference oracle rather than
an autodiff framework.

Training draws (source, target) camera pairs from synthetic scenes, warps
source content into the target, noises the target image, and minimizes the
mean-squared error of the predicted noise.  Iterative-feature conditioning
at training time uses a Gaussian-blur surrogate of the clean image in place
of the sampler's denoised estimates: stronger noise maps to stronger blur.
"""

from __future__ import annotations

import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import correlate1d

from warpdiff.diffusion import (ConditioningBundle, ConditioningMode, Denoiser, NoiseSchedule,
                                build_conditioning, lift_source, sample_trajectory)
from warpdiff.features import ChannelProjector, FeatureExtractor, ToyExtractor, ZERO_NORM_GUARD
from warpdiff.geometry import splat_features
from warpdiff.images import FeatureImage
from warpdiff.scenes import (TrajectorySpec, make_trajectory, random_base_camera,
                             render_scene)

# ---------------------------------------------------------------------------
# Blur surrogate schedule


@dataclass(frozen=True)
class BlurSchedule:
    """Linear ramp of blur strength over T steps."""

    tau_min: float = 0.1
    tau_max: float = 30.0
    steps: int = 50

    def __post_init__(self):
        if not (0 < self.tau_min <= self.tau_max):
            raise ValueError("need 0 < tau_min <= tau_max")
        if self.steps < 1:
            raise ValueError("step count must be at least 1")


def blur_sigma(schedule: BlurSchedule, t: int) -> float:
    """tau_t = tau_min + (t / T)(tau_max - tau_min)."""
    if not 0 <= t <= schedule.steps:
        raise ValueError(f"t must be in [0, {schedule.steps}], got {t}")
    return schedule.tau_min + (t / schedule.steps) * (schedule.tau_max - schedule.tau_min)


def blur_kernel_size(tau: float) -> int:
    """k = 2 round(3 tau) + 1 (round half up); always odd and >= 1."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return 2 * int(math.floor(3.0 * tau + 0.5)) + 1


def gaussian_blur(img: FeatureImage, tau: float, k: int) -> FeatureImage:
    """Separable Gaussian blur, kernel normalized to sum 1, replicate edges."""
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if k == 1:
        return img
    offsets = np.arange(k, dtype=np.float64) - k // 2
    weights = np.exp(-(offsets ** 2) / (2.0 * tau * tau))
    weights /= weights.sum()
    out = correlate1d(img.data, weights, axis=0, mode="nearest")
    out = correlate1d(out, weights, axis=1, mode="nearest")
    return FeatureImage(out)


# ---------------------------------------------------------------------------
# Convolutional network with hand-rolled reverse mode


@dataclass
class ConvLayer:
    """One 2D convolution: weight (out, in, k, k), bias (out,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
            raise ValueError(f"weight must be (out, in, k, k) with odd k, got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match out channels {w.shape[0]}")
        self.weight = w
        self.bias = b

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(H, W, C) -> (H*W, C*k*k) patches with replicate padding."""
    pad = k // 2
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    windows = sliding_window_view(x, (k, k), axis=(0, 1))
    h, w = windows.shape[:2]
    return windows.reshape(h * w, -1)


def _col2im(dcols: np.ndarray, height: int, width: int, channels: int, k: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter patch gradients back to pixels.

    Replicate padding is applied row axis then column axis, so its adjoint
    folds the padded borders back edge-first in the reverse order; the fold
    per axis adds the cropped strips onto the boundary rows/columns.
    """
    pad = k // 2
    dwin = dcols.reshape(height, width, channels, k, k)
    hp, wp = height + 2 * pad, width + 2 * pad
    gpad = np.zeros((hp, wp, channels))
    for di in range(k):
        for dj in range(k):
            gpad[di:di + height, dj:dj + width] += dwin[:, :, :, di, dj]
    if pad == 0:
        return gpad
    g = gpad[:, pad:pad + width].copy()
    g[:, 0] += gpad[:, :pad].sum(axis=1)
    g[:, -1] += gpad[:, pad + width:].sum(axis=1)
    out = g[pad:pad + height].copy()
    out[0] += g[:pad].sum(axis=0)
    out[-1] += g[pad + height:].sum(axis=0)
    return out


class ConvNet:
    """Sequential 3x3-style convolutions with ReLU between layers.

    The final layer is linear.  ``forward`` optionally returns the caches
    ``backward`` needs; both passes are deterministic pure numpy.
    """

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ValueError("need at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ValueError("adjacent layer channel counts do not match")
        self.layers = layers

    @property
    def in_channels(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def num_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    @classmethod
    def seeded(cls, channel_plan, kernel: int = 3, seed: int = 0) -> "ConvNet":
        """He-style Gaussian init over a channel plan like (in, h1, h2, out)."""
        rng = np.random.default_rng(seed)
        layers = []
        for cin, cout in zip(channel_plan, channel_plan[1:]):
            scale = math.sqrt(2.0 / (cin * kernel * kernel))
            layers.append(ConvLayer(rng.normal(scale=scale, size=(cout, cin, kernel, kernel)),
                                    np.zeros(cout)))
        return cls(layers)

    def forward(self, x: np.ndarray, want_cache: bool = False):
        h, w = x.shape[:2]
        caches = []
        out = x
        for i, layer in enumerate(self.layers):
            cols = _im2col(out, layer.kernel)
            pre = cols @ layer.weight.reshape(layer.weight.shape[0], -1).T + layer.bias
            pre = pre.reshape(h, w, -1)
            if want_cache:
                caches.append((cols, pre))
            out = pre if i == len(self.layers) - 1 else np.maximum(pre, 0.0)
        return (out, caches) if want_cache else out

    def backward(self, caches, dout: np.ndarray):
        """Gradients from dL/d(output): ([(dW, db) per layer], dL/d(input))."""
        h, w = dout.shape[:2]
        grads = [None] * len(self.layers)
        grad = dout
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            cols, pre = caches[i]
            if i != len(self.layers) - 1:
                grad = grad * (pre > 0.0)
            flat = grad.reshape(h * w, -1)
            dw = (flat.T @ cols).reshape(layer.weight.shape)
            db = flat.sum(axis=0)
            grads[i] = (dw, db)
            dcols = flat @ layer.weight.reshape(layer.weight.shape[0], -1)
            grad = _col2im(dcols, h, w, layer.weight.shape[1], layer.kernel)
        return grads, grad


def mse_loss_and_grads(net: ConvNet, x: np.ndarray, target: np.ndarray):
    """Mean-squared error of net(x) against target, with all gradients.

    Returns (loss, [(dW, db) per layer], dL/dx).  This is the exact loss
    the training loop minimizes, so the finite-difference oracle checks the
    real production gradients.
    """
    out, caches = net.forward(x, want_cache=True)
    diff = out - target
    loss = float(np.mean(diff * diff))
    grads, dinput = net.backward(caches, 2.0 * diff / diff.size)
    return loss, grads, dinput


# ---------------------------------------------------------------------------
# Checkpoint format

TDNZ_MAGIC = b"TDNZ"


def save_checkpoint(path, layers) -> None:
    """Write conv layers as: magic, u32 layer count, then per layer u32
    in/out/kernel followed by float32 weights (out, in, k, k) and biases."""
    with open(path, "wb") as f:
        f.write(TDNZ_MAGIC)
        f.write(struct.pack("<I", len(layers)))
        for layer in layers:
            out_c, in_c, k, _ = layer.weight.shape
            f.write(struct.pack("<III", in_c, out_c, k))
            f.write(layer.weight.astype("<f4").tobytes())
            f.write(layer.bias.astype("<f4").tobytes())


def load_checkpoint(path) -> list:
    raw = Path(path).read_bytes()
    if raw[:4] != TDNZ_MAGIC:
        raise ValueError(f"{path}: not a TDNZ checkpoint (bad magic {raw[:4]!r})")
    (count,) = struct.unpack("<I", raw[4:8])
    offset = 8
    layers = []
    for _ in range(count):
        in_c, out_c, k = struct.unpack("<III", raw[offset:offset + 12])
        offset += 12
        wn = out_c * in_c * k * k
        weight = np.frombuffer(raw, dtype="<f4", count=wn, offset=offset)
        offset += wn * 4
        bias = np.frombuffer(raw, dtype="<f4", count=out_c, offset=offset)
        offset += out_c * 4
        layers.append(ConvLayer(weight.astype(np.float64).reshape(out_c, in_c, k, k),
                                bias.astype(np.float64)))
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return layers


def save_projector(path, projector: ChannelProjector) -> None:
    """Store the projection as a single bias-free 1x1 layer."""
    layer = ConvLayer(projector.weight.T.reshape(projector.out_channels,
                                                 projector.in_channels, 1, 1),
                      np.zeros(projector.out_channels))
    save_checkpoint(path, [layer])


def load_projector(path) -> ChannelProjector:
    layers = load_checkpoint(path)
    if len(layers) != 1 or layers[0].kernel != 1:
        raise ValueError(f"{path}: projector checkpoint must hold one 1x1 layer")
    if np.any(layers[0].bias):
        raise ValueError(f"{path}: projector checkpoint carries a nonzero bias")
    out_c, in_c = layers[0].weight.shape[:2]
    return ChannelProjector(layers[0].weight.reshape(out_c, in_c).T)


# ---------------------------------------------------------------------------
# The denoiser

SIGMA_DATA = 0.5


class TinyDenoiser(Denoiser):
    """Conditional noise predictor over the fixed conditioning layout.

    Input channels: 3 (x scaled by c_in = 1/sqrt(sigma^2 + sigma_data^2)),
    then the 18 + 2 C' conditioning channels, then one constant plane
    c_noise = ln(sigma) / 4.  The network emits a 3-channel residual F that
    is combined with a skip connection in the denoised-image domain:

        x0_est  = c_skip * x + c_out * F,   eps_hat = (x - x0_est) / sigma

    with c_skip = s^2/(sigma^2+s^2), c_out = sigma*s/sqrt(sigma^2+s^2),
    s = SIGMA_DATA.  The skip keeps the network's effective target O(1) at
    every noise level: a raw noise head would need unbounded gain as
    sigma -> 0, which a small fixed-width network cannot express.
    """

    def __init__(self, net: ConvNet, feat_channels: int):
        expected = 22 + 2 * feat_channels
        if net.in_channels != expected:
            raise ValueError(f"net expects {net.in_channels} input channels, "
                             f"but feat_channels={feat_channels} implies {expected}")
        if net.out_channels != 3:
            raise ValueError(f"net must emit 3 channels, got {net.out_channels}")
        if net.num_params > 100_000:
            raise ValueError(f"parameter budget exceeded: {net.num_params} > 100000")
        self.net = net
        self.feat_channels = feat_channels

    @classmethod
    def seeded(cls, feat_channels: int = 32, hidden: int = 32, seed: int = 0) -> "TinyDenoiser":
        plan = (22 + 2 * feat_channels, hidden, hidden, 3)
        return cls(ConvNet.seeded(plan, seed=seed), feat_channels)

    def assemble_input(self, x: np.ndarray, sigma: float, cond: ConditioningBundle) -> np.ndarray:
        c_in = 1.0 / math.sqrt(sigma * sigma + SIGMA_DATA * SIGMA_DATA)
        c_noise = math.log(sigma) / 4.0
        plane = np.full((x.shape[0], x.shape[1], 1), c_noise)
        return np.concatenate([x * c_in, cond.as_tensor(self.feat_channels), plane], axis=-1)

    @staticmethod
    def residual_coeffs(sigma: float) -> tuple[float, float]:
        """(a, b) such that eps_hat = a * x - b * F for the skip above."""
        s2 = SIGMA_DATA * SIGMA_DATA
        return sigma / (sigma * sigma + s2), SIGMA_DATA / math.sqrt(sigma * sigma + s2)

    def predict_noise(self, x, sigma, cond):
        residual = self.net.forward(self.assemble_input(x.data, sigma, cond))
        a, b = self.residual_coeffs(sigma)
        eps = a * x.data - b * residual
        if not np.isfinite(eps).all():
            raise ValueError("denoiser produced a non-finite noise prediction")
        return FeatureImage(eps)

    def save(self, path) -> None:
        save_checkpoint(path, self.net.layers)

    @classmethod
    def load(cls, path) -> "TinyDenoiser":
        net = ConvNet(load_checkpoint(path))
        feat_channels, rem = divmod(net.in_channels - 22, 2)
        if rem or feat_channels < 1:
            raise ValueError(f"{path}: input channel count {net.in_channels} does not "
                             f"fit the 22 + 2*C' conditioning layout")
        return cls(net, feat_channels)


# ---------------------------------------------------------------------------
# Training

# Channel offsets of the projected-feature slots inside assemble_input's
# stack: x (3) + ray (6) + warped rgb (3) = 12 channels come first.
_FEAT_SLOT_OFFSET = 12


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    denoiser: TinyDenoiser
    projector: ChannelProjector | None
    extractor: FeatureExtractor
    losses: list = field(default_factory=list)


@dataclass(frozen=True)
class _Sample:
    """Static per-(scene, target) training inputs, cached across steps."""

    target_rgb: np.ndarray
    cond: ConditioningBundle
    unit_warped: np.ndarray | None  # normalized pre-projection warped features


def _normalized(feat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(feat, axis=-1, keepdims=True)
    return np.where(norms < ZERO_NORM_GUARD, 0.0, feat / np.maximum(norms, ZERO_NORM_GUARD))


def _adam_update(params, state, lr, step):
    b1, b2, eps = 0.9, 0.999, 1e-8
    for key, (p, g) in params.items():
        m, v = state[key]
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state[key] = (m, v)
        p -= lr * (m / (1 - b1 ** step)) / (np.sqrt(v / (1 - b2 ** step)) + eps)


def default_trajectory() -> TrajectorySpec:
    """Training/evaluation default: a moderate orbit around the scene.

    The orbit radius matches the typical camera distance so the pivot sits
    near the scene center, giving real parallax and disocclusion holes.
    """
    return TrajectorySpec("orbit", 5, orbit_radius=5.0, orbit_span_deg=40.0)


def build_training_pairs(scenes, mode: ConditioningMode, extractor: FeatureExtractor,
                         projector: ChannelProjector | None, trajectory: TrajectorySpec,
                         width: int, height: int, source_frame: int = 0):
    """Render each scene's trajectory and warp the source into every other
    frame, returning one cached :class:`_Sample` per (scene, target) pair.

    The cached bundle holds iterative slots at their warped initialization;
    the training loop overwrites projector-dependent slots each step.
    unit_warped keeps the pre-projection normalized features so projector
    gradients and slot refreshes avoid re-splatting.
    """
    samples = []
    for scene in scenes:
        base = random_base_camera(scene.seed, width=width, height=height)
        cams = make_trajectory(trajectory, base)
        src_cam = cams[source_frame]
        src_rgb, src_depth = render_scene(scene, src_cam)
        cloud = lift_source(src_rgb, src_depth, src_cam, mode, extractor)
        for j, cam in enumerate(cams):
            if j == source_frame:
                continue
            target_rgb, _ = render_scene(scene, cam)
            cond = build_conditioning(cloud, cam, mode, projector)
            unit_warped = None
            if mode.includes(ConditioningMode.WARPED_FEAT):
                warped, _, _ = splat_features(cloud, cam)
                unit_warped = _normalized(warped.data[:, :, 3:])
            samples.append(_Sample(target_rgb.data, cond, unit_warped))
    return samples


def train_denoiser(scenes, mode: ConditioningMode, schedule: NoiseSchedule,
                   blur: BlurSchedule, steps: int, rng_seed: int, *,
                   width: int = 32, height: int = 32, feat_channels: int = 16,
                   extractor: FeatureExtractor | None = None, hidden: int = 24,
                   optimizer: str = "sgd", lr: float = 1e-3, batch: int = 1,
                   lr_decay: str = "none", enable_iter_after: float = 0.6,
                   trajectory: TrajectorySpec | None = None) -> TrainResult:
    """Train a TinyDenoiser (and jointly the channel projector) on scenes.

    Each step: draw ``batch`` cached (scene, target) pairs, each with its
    own schedule index and noise image; build x_t = x0 + sigma * eps; in
    iterative modes past the enable point, fill the iterative slots from a
    Gaussian-blurred x0 with blur strength increasing with the noise
    level; minimize mean((eps_hat - eps)^2) with gradients averaged over
    the batch.  ``lr_decay="cosine"`` anneals the learning rate to zero
    over the run.  Deterministic in rng_seed.  Raises TrainingDiverged on
    a non-finite loss.
    """
    if not scenes:
        raise ValueError("need at least one training scene")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if batch < 1:
        raise ValueError("batch must be positive")
    if blur.steps != schedule.steps:
        raise ValueError(f"blur steps {blur.steps} must match schedule steps {schedule.steps}")
    if optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if lr_decay not in ("none", "cosine"):
        raise ValueError(f"unknown lr_decay {lr_decay!r}")
    if trajectory is None:
        trajectory = default_trajectory()

    rng = np.random.default_rng(rng_seed)
    if extractor is None:
        extractor = ToyExtractor(seed=rng_seed, channels=12)
    uses_feat = mode.includes(ConditioningMode.WARPED_FEAT)
    iter_mode = mode.includes(ConditioningMode.ITERATIVE_RGB)
    projector = (ChannelProjector.seeded(extractor.channels, feat_channels, seed=rng_seed)
                 if uses_feat else None)
    denoiser = TinyDenoiser.seeded(feat_channels, hidden, seed=rng_seed)

    samples = build_training_pairs(scenes, mode, extractor, projector, trajectory,
                                   width, height)
    enable_at = int(enable_iter_after * steps)
    adam_state = None
    losses = []

    for step in range(steps):
        step_loss = 0.0
        step_grads = None
        step_proj_grad = None
        for _ in range(batch):
            sample = samples[rng.integers(len(samples))]
            t = int(rng.integers(schedule.steps + 1))
            sigma = float(schedule.sigmas[t])
            eps = rng.standard_normal((height, width, 3))

            blurred = None
            if iter_mode and step >= enable_at:
                # Low schedule index t means high noise, so it maps to the
                # top end of the blur ramp.
                tau = blur_sigma(blur, blur.steps - t)
                blurred = gaussian_blur(FeatureImage(sample.target_rgb), tau,
                                        blur_kernel_size(tau))

            loss, grads, proj_grad = training_loss_and_grads(
                denoiser, projector, extractor, sample, sigma, eps, blurred)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step} (sigma={sigma:.4g})")
            step_loss += loss
            if step_grads is None:
                step_grads = [(dw, db) for dw, db in grads]
                step_proj_grad = proj_grad
            else:
                for (aw, ab), (dw, db) in zip(step_grads, grads):
                    aw += dw
                    ab += db
                if proj_grad is not None:
                    step_proj_grad += proj_grad
        losses.append(step_loss / batch)

        params = {}
        scale = 1.0 / batch
        for i, (dw, db) in enumerate(step_grads):
            params[f"w{i}"] = (denoiser.net.layers[i].weight, dw * scale)
            params[f"b{i}"] = (denoiser.net.layers[i].bias, db * scale)
        if step_proj_grad is not None:
            new_w = projector.weight.copy()
            params["proj"] = (new_w, step_proj_grad * scale)

        step_lr = lr
        if lr_decay == "cosine":
            step_lr = lr * 0.5 * (1.0 + math.cos(math.pi * step / steps))
        if optimizer == "sgd":
            for p, g in params.values():
                p -= step_lr * g
        else:
            if adam_state is None:
                adam_state = {k: (np.zeros_like(p), np.zeros_like(p))
                              for k, (p, _) in params.items()}
            _adam_update(params, adam_state, step_lr, step + 1)
        if step_proj_grad is not None:
            projector = projector.with_weight(new_w)

    return TrainResult(denoiser, projector, extractor, losses)


def training_loss_and_grads(denoiser: TinyDenoiser, projector: ChannelProjector | None,
                            extractor: FeatureExtractor, sample: _Sample, sigma: float,
                            eps: np.ndarray, blurred: FeatureImage | None):
    """Loss and all parameter gradients for one training sample.

    ``blurred`` is the blur surrogate of the clean target when the
    iterative path is active for this step, else None (iterative slots
    then stay at their warped initialization).  Returns (loss, conv grads,
    projector grad or None); the projector enters the loss linearly through
    the warped_feat slot and the fused iter_feat slot, so its gradient is
    the corresponding input-slot gradients pulled back through those units.
    """
    mode = sample.cond.mode
    uses_feat = mode.includes(ConditioningMode.WARPED_FEAT)
    iter_feat_mode = mode.includes(ConditioningMode.ITERATIVE_FEAT)
    cond = sample.cond
    mask3 = cond.mask.data[:, :, None]
    unit_blur = None
    updates = {}
    if uses_feat:
        # The cached bundle's projected slots are stale once weights move.
        updates["warped_feat"] = FeatureImage(sample.unit_warped @ projector.weight)
    if blurred is not None:
        updates["iter_rgb"] = FeatureImage(
            np.where(mask3 == 1.0, cond.warped_rgb.data, blurred.data))
        if iter_feat_mode:
            unit_blur = _normalized(extractor.extract(blurred).data)
            unit_fused = np.where(mask3 == 1.0, sample.unit_warped, unit_blur)
            updates["iter_feat"] = FeatureImage(unit_fused @ projector.weight)
    elif iter_feat_mode:
        updates["iter_feat"] = updates["warped_feat"]
    if updates:
        cond = replace(cond, **updates)

    x_t = sample.target_rgb + sigma * eps
    net_input = denoiser.assemble_input(x_t, sigma, cond)
    residual, caches = denoiser.net.forward(net_input, want_cache=True)
    a, b = denoiser.residual_coeffs(sigma)
    diff = (a * x_t - b * residual) - eps
    loss = float(np.mean(diff * diff))
    grads, dinput = denoiser.net.backward(caches, (-b) * (2.0 / diff.size) * diff)

    proj_grad = None
    if uses_feat:
        c = denoiser.feat_channels
        d_warp = dinput[:, :, _FEAT_SLOT_OFFSET:_FEAT_SLOT_OFFSET + c]
        proj_grad = sample.unit_warped.reshape(-1, extractor.channels).T \
            @ d_warp.reshape(-1, c)
        if iter_feat_mode:
            d_iter = dinput[:, :, _FEAT_SLOT_OFFSET + c:_FEAT_SLOT_OFFSET + 2 * c]
            unit = (np.where(mask3 == 1.0, sample.unit_warped, unit_blur)
                    if blurred is not None else sample.unit_warped)
            proj_grad += unit.reshape(-1, extractor.channels).T @ d_iter.reshape(-1, c)
    return loss, grads, proj_grad


def reconstruction_mse(result: TrainResult, scenes, mode: ConditioningMode,
                       schedule: NoiseSchedule, *,
                       trajectory: TrajectorySpec | None = None,
                       target_frames: Sequence[int] | int = (1, 2, 3, 4),
                       rng_seed: int = 0,
                       width: int = 32, height: int = 32) -> float:
    """Mean image-space MSE of full sampler outputs against ground truth.

    For each scene: warp the trajectory's source frame, sample the target
    frames with the trained denoiser, and compare against direct renders.
    Averaging over several targets keeps the estimate stable across the
    sampler's per-frame noise draws.
    """
    if trajectory is None:
        trajectory = default_trajectory()
    if isinstance(target_frames, int):
        target_frames = (target_frames,)
    targets = tuple(target_frames)
    if not targets:
        raise ValueError("target_frames must be non-empty")
    total = 0.0
    for scene in scenes:
        base = random_base_camera(scene.seed, width=width, height=height)
        cams = make_trajectory(trajectory, base)
        src_rgb, src_depth = render_scene(scene, cams[0])
        frames = sample_trajectory(src_rgb, src_depth, cams[0],
                                   [cams[t] for t in targets],
                                   result.denoiser, schedule, mode, result.extractor,
                                   result.projector, rng_seed + scene.seed)
        for frame, t in zip(frames, targets):
            target_rgb, _ = render_scene(scene, cams[t])
            diff = frame.data - target_rgb.data
            total += float(np.mean(diff * diff))
    return total / (len(scenes) * len(targets))
