# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled z-buffer scan conversion; mirrors ``_raster_py.raster_kernel`` operation for operation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil

cnp.import_array()


def raster_kernel(double[:, ::1] screen, double[::1] depth, long long[:, ::1] faces,
                  double near, int width, int height):
    cdef Py_ssize_t nf = faces.shape[0]
    face_id_arr = np.full((height, width), -1, dtype=np.int64)
    bary_arr = np.zeros((height, width, 3), dtype=np.float64)
    zbuf_arr = np.full((height, width), np.inf, dtype=np.float64)
    cdef long long[:, ::1] face_id = face_id_arr
    cdef double[:, :, ::1] bary = bary_arr
    cdef double[:, ::1] zbuf = zbuf_arr
    cdef Py_ssize_t f, r, c, r0, r1, c0, c1
    cdef long long i0, i1, i2
    cdef double x0, y0, x1, y1, x2, y2, z0, z1, z2, area, px, py
    cdef double e0, e1, e2, q0, q1, q2, s, d
    cdef double xmin, xmax, ymin, ymax
    with nogil:
        for f in range(nf):
            i0 = faces[f, 0]
            i1 = faces[f, 1]
            i2 = faces[f, 2]
            z0 = depth[i0]
            z1 = depth[i1]
            z2 = depth[i2]
            if z0 <= near or z1 <= near or z2 <= near:
                continue
            x0 = screen[i0, 0]
            y0 = screen[i0, 1]
            x1 = screen[i1, 0]
            y1 = screen[i1, 1]
            x2 = screen[i2, 0]
            y2 = screen[i2, 1]
            area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
            if not area < 0:
                continue
            xmin = min(x0, min(x1, x2))
            xmax = max(x0, max(x1, x2))
            ymin = min(y0, min(y1, y2))
            ymax = max(y0, max(y1, y2))
            c0 = <Py_ssize_t>max(ceil(xmin - 0.5), 0.0)
            c1 = <Py_ssize_t>min(floor(xmax - 0.5), width - 1.0)
            r0 = <Py_ssize_t>max(ceil(ymin - 0.5), 0.0)
            r1 = <Py_ssize_t>min(floor(ymax - 0.5), height - 1.0)
            for r in range(r0, r1 + 1):
                py = r + 0.5
                for c in range(c0, c1 + 1):
                    px = c + 0.5
                    e0 = (x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)
                    e1 = (x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)
                    e2 = (x0 - px) * (y1 - py) - (x1 - px) * (y0 - py)
                    if e0 > 0 or e1 > 0 or e2 > 0:
                        continue
                    q0 = (e0 / area) / z0
                    q1 = (e1 / area) / z1
                    q2 = (e2 / area) / z2
                    s = q0 + q1 + q2
                    d = 1.0 / s
                    if d < zbuf[r, c]:
                        zbuf[r, c] = d
                        face_id[r, c] = f
                        bary[r, c, 0] = q0 / s
                        bary[r, c, 1] = q1 / s
                        bary[r, c, 2] = q2 / s
    return face_id_arr, bary_arr, zbuf_arr
