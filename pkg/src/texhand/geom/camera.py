"""Pinhole camera and projection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from texhand.diffcore import Tensor, ops


@dataclass
class Camera:
    """World→camera rigid transform followed by a pinhole projection.

    Camera axes follow the image: x right, y down, z forward.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = 0.1

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.validate()

    def validate(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.near <= 0:
            raise ValueError(f"near must be positive, got {self.near}")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"camera rotation is not orthonormal (|RᵀR - I| = {err:.2e})")

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points):
        if isinstance(points, Tensor):
            return ops.add(ops.matmul(points, Tensor(self.rotation.T)), Tensor(self.translation))
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
            "near": self.near,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["rotation"], d["translation"], d.get("near", 0.1))

    @classmethod
    def looking_at_origin(cls, distance: float, focal: float, width: int, height: int,
                          near: float = 0.1) -> "Camera":
        """Camera on the world +z axis looking back at the origin, world +y up in the image."""
        rot = np.diag([1.0, -1.0, -1.0])
        return cls(focal, focal, width / 2, height / 2, rot, [0.0, 0.0, distance], near)

    @classmethod
    def weak_perspective(cls, scale: float, tx: float, ty: float, width: int, height: int,
                         focal: float = 5000.0, near: float = 0.1) -> "Camera":
        """Approximate a weak-perspective camera (s, tx, ty) with a long-focal pinhole.

        ``scale`` is in normalised image units (image size 2 spans [-1, 1]);
        depth is chosen so that an object at the origin is imaged with that scale.
        """
        size = max(width, height)
        depth = 2 * focal / (scale * size)
        return cls(focal, focal, width / 2, height / 2, np.eye(3), [tx, ty, depth], near)


def project(points, camera: Camera):
    """Project world points to pixel coordinates.

    Returns ``(pixels N×2, valid N)``; points with camera depth ≤ near are
    flagged invalid.  Accepts numpy arrays or Tensors (differentiable).
    """
    pc = camera.to_camera(points)
    if isinstance(pc, Tensor):
        z = pc[:, 2:3]
        valid = z.data[:, 0] > camera.near
        xy = ops.div(pc[:, 0:2], z)
        pix = ops.add(ops.mul(xy, Tensor([camera.fx, camera.fy])), Tensor([camera.cx, camera.cy]))
        return pix, valid
    z = pc[:, 2]
    valid = z > camera.near
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * pc[:, 0] / z + camera.cx
        v = camera.fy * pc[:, 1] / z + camera.cy
    return np.stack([u, v], axis=1), valid
