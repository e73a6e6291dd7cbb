"""Pure-numpy z-buffer scan conversion (fallback for the compiled kernel).

Arithmetic is ordered exactly as in ``_raster_ext.pyx`` so both backends
produce bit-identical buffers.
"""
from __future__ import annotations

import math

import numpy as np


def raster_kernel(screen: np.ndarray, depth: np.ndarray, faces: np.ndarray, near: float,
                  width: int, height: int):
    face_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    zbuf = np.full((height, width), np.inf, dtype=np.float64)
    tri_z = depth[faces]
    ok = (tri_z > near).all(axis=1)
    xs = screen[faces, 0]
    ys = screen[faces, 1]
    area = (xs[:, 1] - xs[:, 0]) * (ys[:, 2] - ys[:, 0]) - (xs[:, 2] - xs[:, 0]) * (ys[:, 1] - ys[:, 0])
    for f in np.nonzero(ok & (area < 0))[0]:
        x0, x1, x2 = xs[f]
        y0, y1, y2 = ys[f]
        z0, z1, z2 = tri_z[f]
        a = area[f]
        c0 = int(max(math.ceil(min(x0, x1, x2) - 0.5), 0.0))
        c1 = int(min(math.floor(max(x0, x1, x2) - 0.5), width - 1.0))
        r0 = int(max(math.ceil(min(y0, y1, y2) - 0.5), 0.0))
        r1 = int(min(math.floor(max(y0, y1, y2) - 0.5), height - 1.0))
        if c1 < c0 or r1 < r0:
            continue
        py = (np.arange(r0, r1 + 1, dtype=np.float64) + 0.5)[:, None]
        px = (np.arange(c0, c1 + 1, dtype=np.float64) + 0.5)[None, :]
        e0 = (x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)
        e1 = (x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)
        e2 = (x0 - px) * (y1 - py) - (x1 - px) * (y0 - py)
        inside = (e0 <= 0) & (e1 <= 0) & (e2 <= 0)
        if not inside.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            q0 = (e0 / a) / z0
            q1 = (e1 / a) / z1
            q2 = (e2 / a) / z2
            s = q0 + q1 + q2
            d = 1.0 / s
        zb = zbuf[r0:r1 + 1, c0:c1 + 1]
        win = inside & (d < zb)
        if not win.any():
            continue
        zb[win] = d[win]
        face_id[r0:r1 + 1, c0:c1 + 1][win] = f
        bb = bary[r0:r1 + 1, c0:c1 + 1]
        bb[win, 0] = (q0 / s)[win]
        bb[win, 1] = (q1 / s)[win]
        bb[win, 2] = (q2 / s)[win]
    return face_id, bary, zbuf
