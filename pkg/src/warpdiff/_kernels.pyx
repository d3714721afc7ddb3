# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels (see _pure.py for the reference).

The arithmetic mirrors the numpy fallback operation for operation; together
with -ffp-contract=off this keeps both backends bit-identical.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, sqrt

cnp.import_array()


def splat_zbuffer(cnp.int64_t[::1] rows, cnp.int64_t[::1] cols,
                  double[::1] depths, double[:, ::1] features,
                  Py_ssize_t height, Py_ssize_t width):
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t c = features.shape[1]
    feat_np = np.zeros((height, width, c))
    mask_np = np.zeros((height, width))
    depth_np = np.full((height, width), np.inf)
    cdef double[:, :, ::1] feat = feat_np
    cdef double[:, ::1] mask = mask_np
    cdef double[:, ::1] depth = depth_np
    cdef Py_ssize_t i, j, r, q
    # Ascending index order plus strict < keeps the lowest index at ties.
    for i in range(n):
        r = rows[i]
        q = cols[i]
        if depths[i] < depth[r, q]:
            depth[r, q] = depths[i]
            mask[r, q] = 1.0
            for j in range(c):
                feat[r, q, j] = features[i, j]
    return feat_np, mask_np, depth_np


def raycast(double[::1] origin, double[:, :, ::1] dirs,
            double[:, ::1] sphere_centers, double[::1] sphere_radii,
            double[:, ::1] sphere_albedos, cnp.int64_t[::1] sphere_ids,
            double[:, ::1] box_los, double[:, ::1] box_his,
            double[:, ::1] box_albedos, cnp.int64_t[::1] box_ids,
            double[::1] background):
    cdef Py_ssize_t h = dirs.shape[0]
    cdef Py_ssize_t w = dirs.shape[1]
    cdef Py_ssize_t ns = sphere_radii.shape[0]
    cdef Py_ssize_t nb = box_ids.shape[0]
    rgb_np = np.empty((h, w, 3))
    depth_np = np.full((h, w), np.inf)
    hit_np = np.full((h, w), -1, dtype=np.int64)
    cdef double[:, :, ::1] rgb = rgb_np
    cdef double[:, ::1] depth = depth_np
    cdef cnp.int64_t[:, ::1] hit_id = hit_np

    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef Py_ssize_t i, j, k, ax
    cdef double dx, dy, dz, best, s
    cdef double ocx, ocy, ocz, a, b, cc, disc, sq, s_near, s_far
    cdef double tmin, tmax, t1, t2, lo_t, hi_t, lo_v, hi_v, o_v, d_v
    cdef bint inside_ok
    cdef Py_ssize_t best_id

    for i in range(h):
        for j in range(w):
            dx = dirs[i, j, 0]
            dy = dirs[i, j, 1]
            dz = dirs[i, j, 2]
            best = INFINITY
            best_id = -1
            for k in range(ns):
                ocx = ox - sphere_centers[k, 0]
                ocy = oy - sphere_centers[k, 1]
                ocz = oz - sphere_centers[k, 2]
                a = dx * dx + dy * dy + dz * dz
                b = 2.0 * (ocx * dx + ocy * dy + ocz * dz)
                cc = ocx * ocx + ocy * ocy + ocz * ocz - sphere_radii[k] * sphere_radii[k]
                disc = b * b - 4.0 * a * cc
                if disc < 0.0:
                    continue
                sq = sqrt(disc)
                s_near = (-b - sq) / (2.0 * a)
                s_far = (-b + sq) / (2.0 * a)
                s = s_near if s_near > 0.0 else s_far
                if s > 0.0 and s < best:
                    best = s
                    best_id = sphere_ids[k]
            for k in range(nb):
                tmin = -INFINITY
                tmax = INFINITY
                inside_ok = True
                for ax in range(3):
                    lo_v = box_los[k, ax]
                    hi_v = box_his[k, ax]
                    if ax == 0:
                        o_v = ox
                        d_v = dx
                    elif ax == 1:
                        o_v = oy
                        d_v = dy
                    else:
                        o_v = oz
                        d_v = dz
                    if d_v == 0.0:
                        if lo_v <= o_v <= hi_v:
                            continue
                        inside_ok = False
                        break
                    t1 = (lo_v - o_v) / d_v
                    t2 = (hi_v - o_v) / d_v
                    if t1 <= t2:
                        lo_t = t1
                        hi_t = t2
                    else:
                        lo_t = t2
                        hi_t = t1
                    if lo_t > tmin:
                        tmin = lo_t
                    if hi_t < tmax:
                        tmax = hi_t
                if not inside_ok:
                    continue
                s = tmin if tmin > 0.0 else tmax
                if tmin <= tmax and s > 0.0 and s < best:
                    best = s
                    best_id = box_ids[k]
            depth[i, j] = best
            hit_id[i, j] = best_id
            if best_id < 0:
                rgb[i, j, 0] = background[0]
                rgb[i, j, 1] = background[1]
                rgb[i, j, 2] = background[2]

    # Albedo fill by id keeps the color assignment identical to the fallback.
    for i in range(h):
        for j in range(w):
            best_id = hit_id[i, j]
            if best_id >= 0:
                for k in range(ns):
                    if sphere_ids[k] == best_id:
                        rgb[i, j, 0] = sphere_albedos[k, 0]
                        rgb[i, j, 1] = sphere_albedos[k, 1]
                        rgb[i, j, 2] = sphere_albedos[k, 2]
                        break
                else:
                    for k in range(nb):
                        if box_ids[k] == best_id:
                            rgb[i, j, 0] = box_albedos[k, 0]
                            rgb[i, j, 1] = box_albedos[k, 1]
                            rgb[i, j, 2] = box_albedos[k, 2]
                            break
    return rgb_np, depth_np, hit_np
