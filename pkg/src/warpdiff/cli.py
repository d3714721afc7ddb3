"""Command-line interface for the full pipeline.

Subcommands: ``make-scenes`` (procedural data), ``train`` (denoiser +
projector), ``sample`` (conditioned generation), ``evaluate`` (metrics
CSV), ``ablate`` (per-mode comparison table).

Every subcommand writes ``run_config.json`` with its fully resolved
configuration into the output location; re-running with ``--config
run_config.json`` reproduces all artifacts byte-for-byte.  Explicit
command-line flags override values from the config file.

Randomness flows from one ``--seed`` per subcommand with fixed offsets:
``make-scenes`` gives scene *i* the seed ``seed + i``; ``train``/``sample``
pass ``seed`` straight to the library (which offsets per frame); ``ablate``
derives training scenes from ``seed + 100 + i`` and held-out scenes from
``seed + 900 + i``.  Base cameras are always seeded by the scene's own
seed.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 numerical
failure.  All file writes go through a temp-file-then-rename step so an
interrupted run never leaves a corrupt artifact.  ``WARPDIFF_THREADS``
caps worker threads for per-scene parallel work (0 or 1 = sequential
reference mode); results do not depend on it.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from warpdiff.diffusion import (ConditioningMode, GaussianOracleDenoiser, NoiseSchedule,
                                build_conditioning, lift_source, sample_trajectory)
from warpdiff.features import ChannelProjector, ToyExtractor
from warpdiff.geometry import read_trajectory, write_trajectory
from warpdiff.images import FeatureImage, read_fimg, read_png, write_fimg, write_png
from warpdiff.metrics import (PoseSequence, VideoFrames, frame_quality, pose_errors,
                              psnr, quality_drift, ssim)
from warpdiff.scenes import (TrajectorySpec, make_trajectory, random_base_camera,
                             random_scene, read_scene, render_scene, room_scene,
                             write_scene)
from warpdiff.training import (BlurSchedule, TinyDenoiser, TrainingDiverged,
                               default_trajectory, load_projector, reconstruction_mse,
                               save_projector, train_denoiser)

_MODE_CHOICES = [m.value for m in ConditioningMode]


# ---------------------------------------------------------------------------
# Atomic output helpers


def _replace_into(tmp: Path, path: Path) -> None:
    os.replace(tmp, path)


def _atomic(path: Path, writer) -> None:
    """Run writer(tmp_path) and rename the result over path."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        writer(tmp)
        _replace_into(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _write_text(path: Path, text: str) -> None:
    _atomic(path, lambda tmp: tmp.write_text(text))


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _write_text(path, buf.getvalue())


def _thread_count() -> int:
    try:
        return max(int(os.environ.get("WARPDIFF_THREADS", "0")), 0)
    except ValueError:
        return 0


def _parallel_map(fn, items):
    """Ordered map, threaded when WARPDIFF_THREADS > 1."""
    threads = _thread_count()
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Config resolution


def _apply_config(ctx: click.Context) -> None:
    """Fill parameters from --config for flags not given on the command line."""
    config_path = ctx.params.get("config")
    if config_path is None:
        return
    try:
        loaded = json.loads(Path(config_path).read_text())
    except OSError as exc:
        click.echo(f"error: cannot read config: {exc}", err=True)
        sys.exit(3)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"{config_path}: not valid JSON ({exc})")
    if not isinstance(loaded, dict):
        raise click.UsageError(f"{config_path}: config must be a JSON object")
    subcommand = loaded.pop("subcommand", None)
    if subcommand is not None and subcommand != ctx.command.name:
        raise click.UsageError(f"{config_path}: config is for subcommand "
                               f"{subcommand!r}, not {ctx.command.name!r}")
    unknown = set(loaded) - set(ctx.params)
    if unknown:
        raise click.UsageError(f"{config_path}: unknown keys {sorted(unknown)}")
    for key, value in loaded.items():
        if ctx.get_parameter_source(key) == click.core.ParameterSource.DEFAULT:
            ctx.params[key] = value


def _run_config(ctx: click.Context) -> dict:
    cfg = {"subcommand": ctx.command.name}
    for key, value in ctx.params.items():
        if key == "config":
            continue
        cfg[key] = value
    return cfg


def _require_params(params, *keys) -> None:
    """Reject missing options that neither the command line nor config set."""
    for key, flag in keys:
        if params.get(key) is None:
            raise click.UsageError(f"missing required option {flag}")


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        click.echo(f"error: {what} not found: {path}", err=True)
        sys.exit(3)
    return path


# ---------------------------------------------------------------------------
# Shared flag groups


def _schedule_options(fn):
    fn = click.option("--sigma-min", default=0.01, show_default=True,
                      help="Lowest noise level of the sigma ladder.")(fn)
    fn = click.option("--sigma-max", default=2.0, show_default=True,
                      help="Highest noise level of the sigma ladder.")(fn)
    fn = click.option("--sample-steps", default=16, show_default=True,
                      help="Number of sampler steps (sigma ladder length - 1).")(fn)
    return fn


def _trajectory_options(fn):
    fn = click.option("--trajectory", type=click.Choice(["orbit", "dolly-forward",
                                                         "lateral"]),
                      default="orbit", show_default=True)(fn)
    fn = click.option("--frames", default=5, show_default=True,
                      help="Cameras per trajectory (>= 2).")(fn)
    fn = click.option("--orbit-radius", default=5.0, show_default=True)(fn)
    fn = click.option("--orbit-span", default=40.0, show_default=True,
                      help="Orbit angle span in degrees.")(fn)
    fn = click.option("--dolly-distance", default=1.0, show_default=True)(fn)
    fn = click.option("--lateral-span", default=1.0, show_default=True)(fn)
    return fn


def _make_trajectory_spec(params) -> TrajectorySpec:
    return TrajectorySpec(params["trajectory"], params["frames"],
                          orbit_radius=params["orbit_radius"],
                          orbit_span_deg=params["orbit_span"],
                          dolly_distance=params["dolly_distance"],
                          lateral_span=params["lateral_span"])


def _config_option(fn):
    return click.option("--config", type=click.Path(dir_okay=False), default=None,
                        help="JSON run config; explicit flags override its values.")(fn)


def _make_schedule(params) -> NoiseSchedule:
    try:
        return NoiseSchedule.karras(sigma_min=params["sigma_min"],
                                    sigma_max=params["sigma_max"],
                                    steps=params["sample_steps"])
    except ValueError as exc:
        raise click.UsageError(str(exc))


def _scene_generator(room: bool):
    return room_scene if room else random_scene


def _load_data_scenes(data_dir) -> list:
    data = Path(data_dir)
    manifest = _require_file(data / "manifest.json", "scene manifest")
    entries = json.loads(manifest.read_text()).get("scenes", [])
    scenes = []
    for entry in entries:
        scenes.append(read_scene(_require_file(data / entry["scene"], "scene file")))
    return scenes


# ---------------------------------------------------------------------------
# Commands


@click.group("warpdiff")
@click.version_option(package_name="warpdiff")
def main() -> None:
    """Semantic-warp conditioned multi-view diffusion, desk scale."""


@main.command("make-scenes")
@_config_option
@click.option("--count", default=5, show_default=True, help="Number of scenes.")
@click.option("--seed", default=0, show_default=True)
@click.option("--width", default=64, show_default=True)
@click.option("--height", default=64, show_default=True)
@click.option("--room/--open", "room", default=False, show_default=True,
              help="Enclose contents in a large box so background pixels "
                   "carry finite depth and can warp.")
@_trajectory_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory.")
@click.pass_context
def cmd_make_scenes(ctx, **_params) -> None:
    """Generate scenes plus ground-truth renders along a trajectory."""
    _apply_config(ctx)
    p = ctx.params
    _require_params(p, ("out_dir", "--out"))
    traj = _make_trajectory_spec(p)
    out = Path(p["out_dir"])
    generator = _scene_generator(p["room"])
    try:
        out.mkdir(parents=True, exist_ok=True)

        def emit(index: int) -> dict:
            scene = generator(p["seed"] + index)
            _atomic(out / f"scene_{index}.json", lambda t: write_scene(t, scene))
            sdir = out / f"scene_{index}"
            (sdir / "frames").mkdir(parents=True, exist_ok=True)
            (sdir / "depth").mkdir(parents=True, exist_ok=True)
            base = random_base_camera(scene.seed, width=p["width"], height=p["height"])
            cams = make_trajectory(traj, base)
            for j, cam in enumerate(cams):
                rgb, depth = render_scene(scene, cam)
                _atomic(sdir / "frames" / f"{j}.png", lambda t: write_png(t, rgb))
                _atomic(sdir / "frames" / f"{j}.fimg", lambda t: write_fimg(t, rgb))
                _atomic(sdir / "depth" / f"{j}.fimg", lambda t: write_fimg(t, depth))
            _atomic(sdir / "cameras.json", lambda t: write_trajectory(t, cams))
            return {"index": index, "seed": scene.seed,
                    "scene": f"scene_{index}.json", "dir": f"scene_{index}",
                    "frames": len(cams)}

        entries = _parallel_map(emit, range(p["count"]))
        _write_json(out / "manifest.json", {"count": p["count"], "scenes": entries})
        _write_json(out / "run_config.json", _run_config(ctx))
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


@main.command("train")
@_config_option
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None,
              help="Scene directory from make-scenes; omitted = built-in toy set.")
@click.option("--mode", type=click.Choice(_MODE_CHOICES), default="warp-feat",
              show_default=True)
@click.option("--steps", default=2000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--width", default=32, show_default=True)
@click.option("--height", default=32, show_default=True)
@_schedule_options
@click.option("--tau-min", default=0.1, show_default=True)
@click.option("--tau-max", default=30.0, show_default=True)
@click.option("--feat-channels", default=8, show_default=True,
              help="Projected feature channels C'.")
@click.option("--extractor-channels", default=12, show_default=True,
              help="Raw feature channels produced by the toy extractor.")
@click.option("--hidden", default=20, show_default=True)
@click.option("--optimizer", type=click.Choice(["sgd", "adam"]), default="sgd",
              show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--batch", default=1, show_default=True)
@click.option("--lr-decay", type=click.Choice(["none", "cosine"]), default="none",
              show_default=True)
@click.option("--enable-iter-after", default=0.6, show_default=True,
              help="Fraction of steps before the iterative surrogate turns on.")
@click.option("--train-count", default=8, show_default=True,
              help="Built-in toy scene count when --data is omitted.")
@_trajectory_options
@click.option("--out", "out_checkpoint", type=click.Path(dir_okay=False),
              default=None, help="Checkpoint path.")
@click.pass_context
def cmd_train(ctx, **_params) -> None:
    """Train the denoiser (and projector) and write checkpoint + loss CSV.

    The projector, when the mode uses features, lands next to the
    checkpoint with a .proj suffix and the loss curve with .loss.csv.
    """
    _apply_config(ctx)
    p = ctx.params
    _require_params(p, ("out_checkpoint", "--out"))
    schedule = _make_schedule(p)
    try:
        blur = BlurSchedule(tau_min=p["tau_min"], tau_max=p["tau_max"],
                            steps=schedule.steps)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    if p["data_dir"] is not None:
        scenes = _load_data_scenes(p["data_dir"])
    else:
        scenes = [room_scene(p["seed"] + i) for i in range(p["train_count"])]
    if not scenes:
        raise click.UsageError("no training scenes")
    mode = ConditioningMode(p["mode"])
    extractor = ToyExtractor(seed=p["seed"], channels=p["extractor_channels"])
    try:
        result = train_denoiser(scenes, mode, schedule, blur, p["steps"], p["seed"],
                                width=p["width"], height=p["height"],
                                feat_channels=p["feat_channels"], extractor=extractor,
                                hidden=p["hidden"], optimizer=p["optimizer"],
                                lr=p["lr"], batch=p["batch"], lr_decay=p["lr_decay"],
                                enable_iter_after=p["enable_iter_after"],
                                trajectory=_make_trajectory_spec(p))
    except TrainingDiverged as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(4)
    ckpt = Path(p["out_checkpoint"])
    try:
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        _atomic(ckpt, lambda t: result.denoiser.save(t))
        if result.projector is not None:
            _atomic(ckpt.with_name(ckpt.name + ".proj"),
                    lambda t: save_projector(t, result.projector))
        _write_csv(ckpt.with_name(ckpt.name + ".loss.csv"), ["step", "loss"],
                   [[i, _fmt(loss)] for i, loss in enumerate(result.losses)])
        _write_json(ckpt.parent / "run_config.json", _run_config(ctx))
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


@main.command("sample")
@_config_option
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
              help="Trained denoiser checkpoint (expects .proj sibling for "
                   "feature modes).")
@click.option("--oracle", is_flag=True, default=False,
              help="Use the analytic Gaussian denoiser instead of a checkpoint.")
@click.option("--oracle-mean", default=0.5, show_default=True)
@click.option("--oracle-var", default=0.25, show_default=True)
@click.option("--scene", "scene_path", type=click.Path(dir_okay=False), default=None,
              help="Scene JSON (from make-scenes).")
@click.option("--mode", type=click.Choice(_MODE_CHOICES), default="warp-feat",
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--width", default=32, show_default=True)
@click.option("--height", default=32, show_default=True)
@_schedule_options
@_trajectory_options
@click.option("--feat-channels", default=8, show_default=True,
              help="Projected feature channels C' (oracle runs only; "
                   "checkpoints carry their own).")
@click.option("--extractor-channels", default=12, show_default=True)
@click.option("--dump-intermediates", is_flag=True, default=False,
              help="Write denoised-estimate snapshots every 10 sampler steps.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.pass_context
def cmd_sample(ctx, **_params) -> None:
    """Render a source view and generate the rest of the trajectory."""
    _apply_config(ctx)
    p = ctx.params
    _require_params(p, ("scene_path", "--scene"), ("out_dir", "--out"))
    if p["oracle"] == (p["checkpoint"] is not None):
        raise click.UsageError("pass exactly one of --checkpoint or --oracle")
    schedule = _make_schedule(p)
    mode = ConditioningMode(p["mode"])
    scene = read_scene(_require_file(p["scene_path"], "scene file"))
    extractor = ToyExtractor(seed=p["seed"], channels=p["extractor_channels"])

    projector = None
    if p["oracle"]:
        if p["oracle_var"] <= 0:
            raise click.UsageError("--oracle-var must be positive")
        shape = (p["height"], p["width"], 3)
        denoiser = GaussianOracleDenoiser(
            FeatureImage(np.full(shape, float(p["oracle_mean"]))),
            FeatureImage(np.full(shape, float(p["oracle_var"]))))
        feat_channels = p["feat_channels"]
    else:
        ckpt = _require_file(p["checkpoint"], "checkpoint")
        denoiser = TinyDenoiser.load(ckpt)
        feat_channels = denoiser.feat_channels
        proj_path = ckpt.with_name(ckpt.name + ".proj")
        if proj_path.is_file():
            projector = load_projector(proj_path)
            if projector.in_channels != extractor.channels:
                raise click.UsageError(
                    f"--extractor-channels {extractor.channels} does not match "
                    f"the checkpoint's projector, which expects "
                    f"{projector.in_channels} feature channels")
    if projector is None and mode.includes(ConditioningMode.WARPED_FEAT):
        projector = ChannelProjector.seeded(extractor.channels, feat_channels,
                                            seed=p["seed"])

    base = random_base_camera(scene.seed, width=p["width"], height=p["height"])
    cams = make_trajectory(_make_trajectory_spec(p), base)
    src_rgb, src_depth = render_scene(scene, cams[0])
    targets = cams[1:]
    if not targets:
        raise click.UsageError("trajectory needs at least 2 frames to sample")

    out = Path(p["out_dir"])
    try:
        (out / "frames").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        snapshots = []
        snapshot = None
        if p["dump_intermediates"]:
            (out / "intermediates").mkdir(parents=True, exist_ok=True)

            def snapshot(frame_index, step, x0_hat):
                if step % 10 == 0:
                    snapshots.append((frame_index, step, x0_hat))

        try:
            frames = sample_trajectory(src_rgb, src_depth, cams[0], targets,
                                       denoiser, schedule, mode, extractor,
                                       projector, p["seed"], snapshot=snapshot)
        except ValueError as exc:
            if "non-finite" in str(exc):
                click.echo(f"error: {exc}", err=True)
                sys.exit(4)
            raise
        if not all(np.all(np.isfinite(f.data)) for f in frames):
            click.echo("error: sampler produced non-finite values", err=True)
            sys.exit(4)

        cloud = lift_source(src_rgb, src_depth, cams[0], mode, extractor)
        for j, (frame, cam) in enumerate(zip(frames, targets), start=1):
            _atomic(out / "frames" / f"{j}.png", lambda t: write_png(t, frame))
            _atomic(out / "frames" / f"{j}.fimg", lambda t: write_fimg(t, frame))
            mask = build_conditioning(cloud, cam, mode, projector).mask
            mask_rgb = FeatureImage(np.repeat(mask.data[:, :, None], 3, axis=2))
            _atomic(out / "masks" / f"{j}.png", lambda t: write_png(t, mask_rgb))
        _atomic(out / "frames" / "0.png", lambda t: write_png(t, src_rgb))
        _atomic(out / "frames" / "0.fimg", lambda t: write_fimg(t, src_rgb))
        for frame_index, step, x0_hat in snapshots:
            name = f"frame{frame_index + 1}_step{step:03d}.png"
            _atomic(out / "intermediates" / name, lambda t: write_png(t, x0_hat))
        _atomic(out / "cameras.json", lambda t: write_trajectory(t, cams))
        _write_json(out / "run_config.json", _run_config(ctx))
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


def _frame_dir(path: Path) -> Path:
    sub = path / "frames"
    return sub if sub.is_dir() else path


def _numeric_sorted(paths):
    def key(p: Path):
        stem = p.stem
        return (0, int(stem)) if stem.isdigit() else (1, stem)
    return sorted(paths, key=key)


def _load_video(dir_path) -> VideoFrames:
    base = _frame_dir(Path(dir_path))
    if not base.is_dir():
        click.echo(f"error: frame directory not found: {dir_path}", err=True)
        sys.exit(3)
    fimgs = _numeric_sorted(base.glob("*.fimg"))
    if fimgs:
        frames = [read_fimg(f) for f in fimgs]
    else:
        pngs = _numeric_sorted(base.glob("*.png"))
        if not pngs:
            click.echo(f"error: no .fimg or .png frames in {base}", err=True)
            sys.exit(3)
        frames = [read_png(f) for f in pngs]
    # Lossless frames may stray slightly outside [0,1]; clamp for the
    # full-reference metrics, which are defined on that range.
    frames = [FeatureImage(np.clip(f.data, 0.0, 1.0)) for f in frames]
    try:
        return VideoFrames(frames)
    except (TypeError, ValueError) as exc:
        click.echo(f"error: {dir_path}: {exc}", err=True)
        sys.exit(3)


def _load_poses(path, what: str) -> PoseSequence:
    cams = read_trajectory(_require_file(path, what))
    return PoseSequence([c.rotation for c in cams], [c.translation for c in cams])


@main.command("evaluate")
@_config_option
@click.option("--gen", "gen_dir", type=click.Path(file_okay=False), default=None,
              help="Generated frames (directory or its frames/ parent).")
@click.option("--gt", "gt_dir", type=click.Path(file_okay=False), default=None,
              help="Ground-truth frames.")
@click.option("--poses-gen", type=click.Path(dir_okay=False), default=None,
              help="Generated-camera trajectory JSON.")
@click.option("--poses-gt", type=click.Path(dir_okay=False), default=None,
              help="Ground-truth trajectory JSON.")
@click.option("--out", "out_csv", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def cmd_evaluate(ctx, **_params) -> None:
    """Write a per-frame metrics CSV plus a trailing mean row.

    Columns: video, frame, psnr, ssim, imq, drift, re_deg, te.  Drift is a
    per-video quantity and repeats on every row.  FIMG frames are
    preferred over PNG when both exist.
    """
    _apply_config(ctx)
    p = ctx.params
    _require_params(p, ("gen_dir", "--gen"), ("gt_dir", "--gt"),
                    ("poses_gen", "--poses-gen"), ("poses_gt", "--poses-gt"),
                    ("out_csv", "--out"))
    gen = _load_video(p["gen_dir"])
    gt = _load_video(p["gt_dir"])
    if len(gen) != len(gt):
        click.echo(f"error: frame count mismatch: {len(gen)} generated vs "
                   f"{len(gt)} ground truth", err=True)
        sys.exit(3)
    poses_gen = _load_poses(p["poses_gen"], "generated pose file")
    poses_gt = _load_poses(p["poses_gt"], "ground-truth pose file")
    if len(poses_gen) != len(gen) or len(poses_gt) != len(gt):
        click.echo("error: pose count does not match frame count", err=True)
        sys.exit(3)

    video = Path(p["gen_dir"]).name
    re_deg, te = pose_errors(poses_gen, poses_gt)
    drift = quality_drift(gen)
    rows = []
    cols = {"psnr": [], "ssim": [], "imq": []}
    for j, (g, r) in enumerate(zip(gen.frames, gt.frames)):
        cols["psnr"].append(psnr(g, r))
        cols["ssim"].append(ssim(g, r))
        cols["imq"].append(frame_quality(g))
        rows.append([video, j, _fmt(cols["psnr"][-1]), _fmt(cols["ssim"][-1]),
                     _fmt(cols["imq"][-1]), _fmt(drift), _fmt(re_deg[j]), _fmt(te[j])])
    rows.append([video, "mean", _fmt(float(np.mean(cols["psnr"]))),
                 _fmt(float(np.mean(cols["ssim"]))), _fmt(float(np.mean(cols["imq"]))),
                 _fmt(drift), _fmt(float(np.mean(re_deg))), _fmt(float(np.mean(te)))])
    out = Path(p["out_csv"])
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_csv(out, ["video", "frame", "psnr", "ssim", "imq", "drift",
                         "re_deg", "te"], rows)
        _write_json(out.parent / "run_config.json", _run_config(ctx))
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


@main.command("ablate")
@_config_option
@click.option("--modes", default="ray,warp-rgb,warp-feat,iter-feat", show_default=True,
              help="Comma-separated conditioning modes to compare.")
@click.option("--steps", default=3500, show_default=True, help="Training steps per mode.")
@click.option("--seed", default=0, show_default=True)
@click.option("--train-count", default=16, show_default=True)
@click.option("--eval-count", default=20, show_default=True)
@click.option("--width", default=32, show_default=True)
@click.option("--height", default=32, show_default=True)
@_schedule_options
@click.option("--feat-channels", default=8, show_default=True)
@click.option("--extractor-channels", default=12, show_default=True)
@click.option("--hidden", default=20, show_default=True)
@click.option("--optimizer", type=click.Choice(["sgd", "adam"]), default="adam",
              show_default=True)
@click.option("--lr", default=4e-3, show_default=True)
@click.option("--batch", default=4, show_default=True)
@click.option("--lr-decay", type=click.Choice(["none", "cosine"]), default="cosine",
              show_default=True)
@click.option("--enable-iter-after", default=0.6, show_default=True)
@click.option("--out", "out_csv", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def cmd_ablate(ctx, **_params) -> None:
    """Train each conditioning mode on a shared budget and tabulate quality.

    One CSV row per mode: held-out reconstruction MSE, PSNR of generated
    vs ground-truth frames, and temporal quality drift of the generated
    sequence, averaged over held-out scenes.  The command reports the
    numbers without asserting any ordering between modes.
    """
    _apply_config(ctx)
    p = ctx.params
    _require_params(p, ("out_csv", "--out"))
    try:
        modes = [ConditioningMode(v.strip()) for v in p["modes"].split(",") if v.strip()]
    except ValueError as exc:
        raise click.UsageError(str(exc))
    if not modes:
        raise click.UsageError("no modes given")
    schedule = _make_schedule(p)
    blur = BlurSchedule(steps=schedule.steps)
    train_scenes = [room_scene(p["seed"] + 100 + i) for i in range(p["train_count"])]
    held_out = [room_scene(p["seed"] + 900 + i) for i in range(p["eval_count"])]
    traj = default_trajectory()

    rows = []
    for mode in modes:
        extractor = ToyExtractor(seed=p["seed"], channels=p["extractor_channels"])
        try:
            result = train_denoiser(train_scenes, mode, schedule, blur, p["steps"],
                                    p["seed"], width=p["width"], height=p["height"],
                                    feat_channels=p["feat_channels"],
                                    extractor=extractor, hidden=p["hidden"],
                                    optimizer=p["optimizer"], lr=p["lr"],
                                    batch=p["batch"], lr_decay=p["lr_decay"],
                                    enable_iter_after=p["enable_iter_after"],
                                    trajectory=traj)
        except TrainingDiverged as exc:
            click.echo(f"error: {mode.value}: {exc}", err=True)
            sys.exit(4)
        mse = reconstruction_mse(result, held_out, mode, schedule, trajectory=traj,
                                 rng_seed=p["seed"], width=p["width"],
                                 height=p["height"])
        psnrs = []
        drifts = []
        for scene in held_out:
            base = random_base_camera(scene.seed, width=p["width"], height=p["height"])
            cams = make_trajectory(traj, base)
            src_rgb, src_depth = render_scene(scene, cams[0])
            try:
                frames = sample_trajectory(src_rgb, src_depth, cams[0],
                                           cams[1:], result.denoiser, schedule,
                                           mode, result.extractor,
                                           result.projector,
                                           p["seed"] + scene.seed)
            except ValueError as exc:
                if "non-finite" in str(exc):
                    click.echo(f"error: {mode.value}: {exc}", err=True)
                    sys.exit(4)
                raise
            clipped = [FeatureImage(np.clip(f.data, 0.0, 1.0)) for f in frames]
            for frame, cam in zip(clipped, cams[1:]):
                gt, _ = render_scene(scene, cam)
                psnrs.append(psnr(frame, gt))
            drifts.append(quality_drift(VideoFrames(clipped)))
        rows.append([mode.value, _fmt(mse), _fmt(float(np.mean(psnrs))),
                     _fmt(float(np.mean(drifts)))])
        click.echo(f"{mode.value}: mse={rows[-1][1]} psnr={rows[-1][2]} "
                   f"drift={rows[-1][3]}")

    out = Path(p["out_csv"])
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_csv(out, ["mode", "mse", "psnr", "drift"], rows)
        _write_json(out.parent / "run_config.json", _run_config(ctx))
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
