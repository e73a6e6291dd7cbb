"""Z-buffered, back-face culled triangle rasterization.

The scan-conversion kernel comes from the compiled extension when it is
built, else from the numpy fallback.  Set ``TEXHAND_PURE_PYTHON=1`` to
force the fallback.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from texhand.geom import _raster_py
from texhand.geom.camera import Camera, project

try:
    if os.environ.get("TEXHAND_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from texhand.geom import _raster_ext
except ImportError:
    _raster_ext = None

BACKENDS = {"python": _raster_py.raster_kernel}
if _raster_ext is not None:
    BACKENDS["compiled"] = _raster_ext.raster_kernel
DEFAULT_BACKEND = "compiled" if _raster_ext is not None else "python"


@dataclass
class RasterFragment:
    pixel: tuple
    face: int
    barycentrics: np.ndarray
    depth: float
    uv: np.ndarray


@dataclass
class FragmentBuffer:
    """Per-pixel nearest fragment; ``face_id == -1`` marks empty pixels."""

    face_id: np.ndarray      # H×W int64
    bary: np.ndarray         # H×W×3 perspective-correct barycentrics
    depth: np.ndarray        # H×W camera depth (inf where empty)
    uv: np.ndarray           # H×W×2

    @property
    def coverage(self) -> np.ndarray:
        return self.face_id >= 0

    @property
    def shape(self) -> tuple:
        return self.face_id.shape

    def fragments(self):
        for r, c in zip(*np.nonzero(self.coverage)):
            yield RasterFragment((int(r), int(c)), int(self.face_id[r, c]), self.bary[r, c],
                                 float(self.depth[r, c]), self.uv[r, c])

    def equals(self, other: "FragmentBuffer") -> bool:
        return all(np.array_equal(a, b) for a, b in ((self.face_id, other.face_id), (self.bary, other.bary),
                                                      (self.depth, other.depth), (self.uv, other.uv)))


def screen_space(vertices: np.ndarray, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    pc = camera.to_camera(np.asarray(vertices, dtype=np.float64))
    pix, _ = project(vertices, camera)
    return np.ascontiguousarray(pix, dtype=np.float64), np.ascontiguousarray(pc[:, 2], dtype=np.float64)


def rasterize(vertices, faces, face_uvs, camera: Camera, width: int, height: int,
              backend: str | None = None) -> FragmentBuffer:
    """Scan-convert posed world-space ``vertices``.

    Pixel (row, col) is sampled at its centre (col + 0.5, row + 0.5).  A face
    is front-facing when its projected signed area is negative (outward
    normal toward the camera); faces with any vertex at depth ≤ near are
    dropped.  Depth ties keep the lower face id.
    """
    kernel = BACKENDS[backend or DEFAULT_BACKEND]
    screen, depth = screen_space(vertices, camera)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    face_id, bary, zbuf = kernel(screen, depth, faces, float(camera.near), int(width), int(height))
    cov = face_id >= 0
    uv = np.zeros((height, width, 2), dtype=np.float64)
    if cov.any():
        fuv = np.asarray(face_uvs, dtype=np.float64)[face_id[cov]]       # P×3×2
        uv[cov] = np.einsum("pk,pkd->pd", bary[cov], fuv)
        np.clip(uv, 0.0, 1.0, out=uv)
    return FragmentBuffer(face_id, bary, zbuf, uv)


def visible_vertices_from_raster(vertices, faces, frags: FragmentBuffer, camera: Camera,
                                 depth_tol: float = 1e-3) -> np.ndarray:
    """Vertex visibility derived from a fragment buffer.

    A vertex is visible when it projects inside the image and the z-buffer at
    its pixel is not nearer than the vertex by more than ``depth_tol``
    (relative), or when the pixel's winning face uses the vertex.
    """
    screen, depth = screen_space(vertices, camera)
    h, w = frags.shape
    col = np.floor(screen[:, 0]).astype(np.int64)
    row = np.floor(screen[:, 1]).astype(np.int64)
    ok = (depth > camera.near) & (col >= 0) & (col < w) & (row >= 0) & (row < h)
    vis = np.zeros(len(vertices), dtype=bool)
    idx = np.nonzero(ok)[0]
    zb = frags.depth[row[idx], col[idx]]
    fid = frags.face_id[row[idx], col[idx]]
    own = np.zeros(len(idx), dtype=bool)
    hit = fid >= 0
    own[hit] = (np.asarray(faces)[fid[hit]] == idx[hit, None]).any(axis=1)
    vis[idx] = own | (depth[idx] <= zb * (1 + depth_tol))
    return vis


def visible_vertices_bruteforce(vertices, faces, camera: Camera, eps: float = 1e-7) -> np.ndarray:
    """A vertex is visible iff the open segment from the camera centre to it
    crosses no triangle that does not contain the vertex (Möller–Trumbore).
    """
    verts = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    origin = camera.center
    tri = verts[faces]
    v0 = tri[:, 0]
    e1 = tri[:, 1] - v0
    e2 = tri[:, 2] - v0
    pc = camera.to_camera(verts)
    vis = pc[:, 2] > camera.near
    for i in np.nonzero(vis)[0]:
        d = verts[i] - origin
        p = np.cross(d, e2)
        det = np.einsum("fk,fk->f", e1, p)
        par = np.abs(det) < eps
        inv = np.where(par, 0.0, 1.0 / np.where(par, 1.0, det))
        s = origin - v0
        u = np.einsum("fk,fk->f", s, p) * inv
        q = np.cross(s, e1)
        v = (q @ d) * inv
        t = np.einsum("fk,fk->f", e2, q) * inv
        hit = (~par) & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > eps) & (t < 1 - 1e-6)
        hit &= ~(faces == i).any(axis=1)
        vis[i] = not hit.any()
    return vis
