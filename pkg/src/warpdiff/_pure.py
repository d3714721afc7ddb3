"""Numpy reference implementations of the hot kernels.

These are the fallback used when the compiled extension is unavailable and
the ground truth the extension is tested against.  The arithmetic here is
kept in exact correspondence with ``_kernels.pyx`` (same per-element
operation order, no fused multiply-adds on the C side) so both backends
produce bit-identical results.
"""

from __future__ import annotations

import numpy as np


def splat_zbuffer(rows, cols, depths, features, height, width):
    """Scatter point features onto a pixel grid keeping the nearest point.

    rows/cols are precomputed integer pixel coordinates (already bounds
    checked), depths the camera-frame z of each point, features an (N, C)
    array.  Ties at equal depth go to the lowest point index.

    Returns (feat_img (H, W, C), mask (H, W), depth_img (H, W)); unwritten
    pixels hold zero features, mask 0 and depth +inf.
    """
    n = rows.shape[0]
    c = features.shape[1]
    feat_img = np.zeros((height, width, c))
    mask = np.zeros((height, width))
    depth_img = np.full((height, width), np.inf)
    if n == 0:
        return feat_img, mask, depth_img

    pix = rows * width + cols
    idx = np.arange(n)
    # Primary key pixel, then depth, then point index: the first entry per
    # pixel after this sort is the z-buffer winner with deterministic ties.
    order = np.lexsort((idx, depths, pix))
    winner_pix, first = np.unique(pix[order], return_index=True)
    winners = order[first]

    wr = winner_pix // width
    wc = winner_pix % width
    feat_img[wr, wc] = features[winners]
    mask[wr, wc] = 1.0
    depth_img[wr, wc] = depths[winners]
    return feat_img, mask, depth_img


def raycast(origin, dirs, sphere_centers, sphere_radii, sphere_albedos, sphere_ids,
            box_los, box_his, box_albedos, box_ids, background):
    """Cast one ray per pixel against spheres and axis-aligned boxes.

    ``dirs`` is (H, W, 3) in world space, scaled so the ray parameter equals
    camera-frame z (dir_cam has z = 1).  The nearest hit along each ray wins;
    exact ties go to the earlier primitive in traversal order (spheres in id
    order, then boxes in id order).  Misses give the background color, +inf
    depth and id -1.

    Returns (rgb (H, W, 3), depth (H, W), hit_id (H, W) int64).
    """
    h, w = dirs.shape[:2]
    depth = np.full((h, w), np.inf)
    hit_id = np.full((h, w), -1, dtype=np.int64)
    rgb = np.tile(np.asarray(background, dtype=np.float64), (h, w, 1))

    ox, oy, oz = origin
    dx = dirs[:, :, 0]
    dy = dirs[:, :, 1]
    dz = dirs[:, :, 2]

    for k in range(sphere_centers.shape[0]):
        cx, cy, cz = sphere_centers[k]
        r = sphere_radii[k]
        ocx = ox - cx
        ocy = oy - cy
        ocz = oz - cz
        a = dx * dx + dy * dy + dz * dz
        b = 2.0 * (ocx * dx + ocy * dy + ocz * dz)
        cc = ocx * ocx + ocy * ocy + ocz * ocz - r * r
        disc = b * b - 4.0 * a * cc
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        s_near = (-b - sq) / (2.0 * a)
        s_far = (-b + sq) / (2.0 * a)
        s = np.where(s_near > 0.0, s_near, s_far)
        hit = ok & (s > 0.0) & (s < depth)
        depth[hit] = s[hit]
        hit_id[hit] = sphere_ids[k]
        rgb[hit] = sphere_albedos[k]

    for k in range(box_los.shape[0]):
        tmin = np.full((h, w), -np.inf)
        tmax = np.full((h, w), np.inf)
        inside_ok = np.ones((h, w), dtype=bool)
        for lo_v, hi_v, o_v, d_v in (
            (box_los[k, 0], box_his[k, 0], ox, dx),
            (box_los[k, 1], box_his[k, 1], oy, dy),
            (box_los[k, 2], box_his[k, 2], oz, dz),
        ):
            zero = d_v == 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo_v - o_v) / d_v
                t2 = (hi_v - o_v) / d_v
            lo_t = np.minimum(t1, t2)
            hi_t = np.maximum(t1, t2)
            # Rays parallel to a slab: hit only if the origin lies between
            # the two planes, and that axis then constrains nothing.
            inside_ok &= np.where(zero, (lo_v <= o_v) & (o_v <= hi_v), True)
            lo_t = np.where(zero, -np.inf, lo_t)
            hi_t = np.where(zero, np.inf, hi_t)
            tmin = np.maximum(tmin, lo_t)
            tmax = np.minimum(tmax, hi_t)
        s = np.where(tmin > 0.0, tmin, tmax)
        hit = inside_ok & (tmin <= tmax) & (s > 0.0) & (s < depth)
        depth[hit] = s[hit]
        hit_id[hit] = box_ids[k]
        rgb[hit] = box_albedos[k]

    return rgb, depth, hit_id
