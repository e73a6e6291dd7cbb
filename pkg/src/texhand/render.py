"""Differentiable textured rendering and the photometric loss.

Coverage comes from the hard rasterizer and is treated as constant.  Inside
it, pixel colours depend on the texture through bilinear sampling and on the
vertex positions through perspective-correct barycentrics and the
interpolated uv.  Silhouette motion carries no gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from texhand.diffcore import Tensor, ops
from texhand.geom.camera import Camera, project
from texhand.geom.raster import FragmentBuffer, rasterize

BACKGROUND = 0.5


@dataclass
class RenderOutput:
    image: Tensor               # 3×H×W
    coverage: np.ndarray        # H×W bool
    fragments: FragmentBuffer
    pixel_index: np.ndarray     # flat indices of covered pixels, row-major
    colors: Tensor              # P×3 colours of covered pixels
    uv: Tensor | np.ndarray     # P×2


def _differentiable_uv(vertices: Tensor, faces, face_uvs, camera: Camera, frags: FragmentBuffer,
                       rows: np.ndarray, cols: np.ndarray) -> Tensor:
    fid = frags.face_id[rows, cols]
    tri = np.asarray(faces)[fid]                          # P×3
    pc = camera.to_camera(vertices)
    screen, _ = project(vertices, camera)
    z = pc[:, 2]
    px = Tensor((cols + 0.5).astype(np.float64))
    py = Tensor((rows + 0.5).astype(np.float64))
    xs = [ops.take_rows(screen[:, 0], tri[:, k]) for k in range(3)]
    ys = [ops.take_rows(screen[:, 1], tri[:, k]) for k in range(3)]
    zs = [ops.take_rows(z, tri[:, k]) for k in range(3)]
    dx = [ops.sub(x, px) for x in xs]
    dy = [ops.sub(y, py) for y in ys]
    e = [ops.sub(ops.mul(dx[(k + 1) % 3], dy[(k + 2) % 3]), ops.mul(dx[(k + 2) % 3], dy[(k + 1) % 3]))
         for k in range(3)]
    area = ops.sub(ops.mul(ops.sub(xs[1], xs[0]), ops.sub(ys[2], ys[0])),
                   ops.mul(ops.sub(xs[2], xs[0]), ops.sub(ys[1], ys[0])))
    q = [ops.div(ops.div(e[k], area), zs[k]) for k in range(3)]
    s = ops.add(ops.add(q[0], q[1]), q[2])
    fuv = np.asarray(face_uvs)[fid]                       # P×3×2
    uv = None
    for k in range(3):
        term = ops.mul(ops.reshape(ops.div(q[k], s), (-1, 1)), Tensor(fuv[:, k]))
        uv = term if uv is None else ops.add(uv, term)
    return uv


def render_textured(vertices, faces, face_uvs, texture, camera: Camera, width: int, height: int,
                    background: float = BACKGROUND, fragments: FragmentBuffer | None = None) -> RenderOutput:
    """Render a textured mesh; uncovered pixels take the background colour.

    ``vertices`` may be a Tensor (gradients flow to vertex positions inside
    fixed coverage) and ``texture`` a 3×H_T×W_T Tensor (gradients flow
    through bilinear sampling).
    """
    verts_np = vertices.data.astype(np.float64) if isinstance(vertices, Tensor) else np.asarray(vertices)
    frags = fragments or rasterize(verts_np, faces, face_uvs, camera, width, height)
    cov = frags.coverage
    rows, cols = np.nonzero(cov)
    pixel_index = rows * width + cols
    texture = texture if isinstance(texture, Tensor) else Tensor(texture)
    if isinstance(vertices, Tensor) and len(rows):
        uv = _differentiable_uv(vertices, faces, face_uvs, camera, frags, rows, cols)
    else:
        uv = Tensor(frags.uv[rows, cols])
    colors = ops.bilinear_sample(texture, uv) if len(rows) else Tensor(np.zeros((0, 3)))
    base = np.full((height * width, 3), background, dtype=texture.dtype)
    base[pixel_index] = 0.0
    flat = ops.add(Tensor(base), ops.scatter_rows(colors, pixel_index, height * width))
    image = ops.transpose(ops.reshape(flat, (height, width, 3)), (2, 0, 1))
    return RenderOutput(image, cov, frags, pixel_index, colors, uv)


def photometric_loss(observed: np.ndarray, rendered: RenderOutput) -> Tensor:
    """Mean absolute colour difference over covered pixels (0 if none)."""
    observed = np.asarray(observed)
    if observed.shape != rendered.image.shape:
        raise ValueError(f"observed image {observed.shape} vs rendered {rendered.image.shape}")
    if not len(rendered.pixel_index):
        return Tensor(0.0)
    target = observed.reshape(3, -1)[:, rendered.pixel_index].T
    return ops.mean(ops.absolute(ops.sub(rendered.colors, Tensor(target))))
