"""Benchmark the compiled splat/raycast kernels against the numpy fallbacks.

Runs each workload on both backends (when the extension is built), checks
that outputs match bit-for-bit, and reports median wall time plus speedup.

    python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import time

import click
import numpy as np

from warpdiff import _pure, native
from warpdiff.scenes import random_base_camera, random_scene
from warpdiff.scenes import _gather  # scene -> kernel array bundle
from warpdiff.geometry import _pixel_dirs_cam


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return sorted(times)[len(times) // 2], out


def _splat_workload(n_points, size, channels, seed):
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, size, size=n_points)
    cols = rng.integers(0, size, size=n_points)
    depths = rng.uniform(0.5, 50.0, size=n_points)
    feats = np.ascontiguousarray(rng.standard_normal((n_points, channels)))
    return (np.ascontiguousarray(rows), np.ascontiguousarray(cols),
            np.ascontiguousarray(depths), feats, size, size)


def _raycast_workload(size, seed):
    scene = random_scene(seed)
    cam = random_base_camera(seed, width=size, height=size)
    arrays = tuple(np.ascontiguousarray(a) for a in _gather(scene))
    dirs = np.ascontiguousarray(_pixel_dirs_cam(cam) @ cam.rotation)
    return (np.ascontiguousarray(cam.center), dirs) + arrays + (
        np.ascontiguousarray(np.asarray(scene.background, dtype=np.float64)),)


def _compare(name, pure_out, ext_out):
    for i, (a, b) in enumerate(zip(pure_out, ext_out)):
        if not np.array_equal(a, b):
            raise AssertionError(f"{name}: output {i} differs between backends")


@click.command()
@click.option("--repeats", default=5, show_default=True, help="Timing repeats (median).")
def main(repeats: int) -> None:
    click.echo(f"active backend: {native.backend_name()}")
    if not native.HAVE_EXT:
        click.echo("compiled extension not built; timing numpy fallback only")

    rows = []
    for n_points in (10_000, 100_000, 1_000_000):
        args = _splat_workload(n_points, 128, 8, seed=n_points)
        t_pure, out_pure = _median_time(lambda: _pure.splat_zbuffer(*args), repeats)
        label = f"splat {n_points:>9,} pts -> 128x128 c8"
        if native.HAVE_EXT:
            t_ext, out_ext = _median_time(lambda: native.splat_zbuffer(*args), repeats)
            _compare(label, out_pure, out_ext)
            rows.append((label, t_pure, t_ext))
        else:
            rows.append((label, t_pure, None))

    for size in (128, 256, 512):
        args = _raycast_workload(size, seed=size)
        t_pure, out_pure = _median_time(lambda: _pure.raycast(*args), repeats)
        label = f"raycast {size}x{size}, 1 scene"
        if native.HAVE_EXT:
            t_ext, out_ext = _median_time(lambda: native.raycast(*args), repeats)
            _compare(label, out_pure, out_ext)
            rows.append((label, t_pure, t_ext))
        else:
            rows.append((label, t_pure, None))

    click.echo(f"{'workload':<34} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for label, t_pure, t_ext in rows:
        if t_ext is None:
            click.echo(f"{label:<34} {t_pure * 1e3:>8.2f}ms {'-':>10} {'-':>8}")
        else:
            click.echo(f"{label:<34} {t_pure * 1e3:>8.2f}ms {t_ext * 1e3:>8.2f}ms "
                       f"{t_pure / t_ext:>7.1f}x")


if __name__ == "__main__":
    main()
