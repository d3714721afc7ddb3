"""Backend selection for the hot kernels.

At import time the compiled Cython extension is preferred; if it is not
built (or ``WARPDIFF_NO_EXT=1`` is set) the numpy fallbacks from
:mod:`warpdiff._pure` are used.  Both backends are bit-compatible, so the
choice never changes results, only speed.
"""

from __future__ import annotations

import os

from warpdiff import _pure

_ext = None
if os.environ.get("WARPDIFF_NO_EXT", "0") != "1":
    try:
        from warpdiff import _kernels as _ext
    except ImportError:
        _ext = None

HAVE_EXT = _ext is not None


def backend_name() -> str:
    return "cython" if HAVE_EXT else "numpy"


def splat_zbuffer(rows, cols, depths, features, height, width):
    if HAVE_EXT:
        return _ext.splat_zbuffer(rows, cols, depths, features, height, width)
    return _pure.splat_zbuffer(rows, cols, depths, features, height, width)


def raycast(origin, dirs, sphere_centers, sphere_radii, sphere_albedos, sphere_ids,
            box_los, box_his, box_albedos, box_ids, background):
    if HAVE_EXT:
        return _ext.raycast(origin, dirs, sphere_centers, sphere_radii, sphere_albedos,
                            sphere_ids, box_los, box_his, box_albedos, box_ids, background)
    return _pure.raycast(origin, dirs, sphere_centers, sphere_radii, sphere_albedos,
                         sphere_ids, box_los, box_his, box_albedos, box_ids, background)
