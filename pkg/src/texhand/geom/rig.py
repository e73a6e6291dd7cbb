"""Pose parameters and linear blend skinning forward kinematics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from texhand.diffcore import Tensor, ops
from texhand.geom.mesh import TriMesh

NUM_GLOBAL = 6


@dataclass
class PoseParams:
    global_rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    curls: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        self.global_rotation = np.asarray(self.global_rotation, dtype=np.float64).reshape(3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.curls = np.asarray(self.curls, dtype=np.float64).reshape(-1)

    @property
    def dof(self) -> int:
        return NUM_GLOBAL + len(self.curls)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.global_rotation, self.translation, self.curls])

    @classmethod
    def from_vector(cls, vec) -> "PoseParams":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[:3], vec[3:6], vec[6:])

    def clamp_curls(self, limits=(0.0, np.pi)) -> "PoseParams":
        return PoseParams(self.global_rotation, self.translation, np.clip(self.curls, *limits))

    def validate(self, limits=(0.0, np.pi)) -> None:
        lo, hi = limits
        if np.any(self.curls < lo) or np.any(self.curls > hi):
            raise ValueError(f"curls {self.curls} outside joint limits [{lo}, {hi}]")

    def to_dict(self) -> dict:
        return {"global_rotation": self.global_rotation.tolist(), "translation": self.translation.tolist(),
                "curls": self.curls.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PoseParams":
        return cls(d["global_rotation"], d["translation"], d["curls"])


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]], dtype=np.float64)


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    k = _skew(np.asarray(axis, dtype=np.float64))
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def rodrigues(omega):
    """Rotation matrix from an axis-angle 3-vector (numpy or Tensor).

    Near zero the sin/cos coefficients switch to their Taylor series in θ²
    so the map stays differentiable at the identity.
    """
    if not isinstance(omega, Tensor):
        omega = np.asarray(omega, dtype=np.float64)
        theta2 = float(omega @ omega)
        if theta2 < 1e-10:
            a, b = 1 - theta2 / 6, 0.5 - theta2 / 24
        else:
            th = np.sqrt(theta2)
            a, b = np.sin(th) / th, (1 - np.cos(th)) / theta2
        k = _skew(omega)
        return np.eye(3) + a * k + b * (k @ k)
    theta2 = ops.sum_(ops.mul(omega, omega))
    if float(theta2.data) < 1e-10:
        a = ops.sub(1.0, ops.mul(theta2, 1 / 6))
        b = ops.sub(0.5, ops.mul(theta2, 1 / 24))
    else:
        th = ops.sqrt(theta2)
        a = ops.div(ops.sin(th), th)
        b = ops.div(ops.sub(1.0, ops.cos(th)), theta2)
    k = _skew_tensor(omega)
    return ops.add(ops.add(Tensor(np.eye(3)), ops.mul(a, k)), ops.mul(b, ops.matmul(k, k)))


_SKEW_BASIS = np.zeros((3, 3, 3))
_SKEW_BASIS[0, 2, 1], _SKEW_BASIS[0, 1, 2] = 1, -1
_SKEW_BASIS[1, 0, 2], _SKEW_BASIS[1, 2, 0] = 1, -1
_SKEW_BASIS[2, 1, 0], _SKEW_BASIS[2, 0, 1] = 1, -1


def _skew_tensor(w: Tensor) -> Tensor:
    return ops.reshape(ops.matmul(ops.reshape(w, (1, 3)), Tensor(_SKEW_BASIS.reshape(3, 9))), (3, 3))


def _axis_rotation_tensor(axis: np.ndarray, angle: Tensor) -> Tensor:
    k = _skew(axis)
    return ops.add(ops.add(Tensor(np.eye(3)), ops.mul(ops.sin(angle), Tensor(k))),
                   ops.mul(ops.sub(1.0, ops.cos(angle)), Tensor(k @ k)))


def joint_transforms(mesh: TriMesh, curls):
    """Rest→posed rigid transforms (R_j, t_j) of every joint, before the global transform."""
    rig = mesh.rig
    tensor = isinstance(curls, Tensor)
    rots, trans = [], []
    for j in range(rig.num_joints):
        p = rig.rest[j]
        dof = rig.curl_dof[j]
        if tensor:
            r_loc = Tensor(np.eye(3)) if dof < 0 else _axis_rotation_tensor(rig.axes[j], curls[dof])
            t_loc = ops.sub(Tensor(p), ops.reshape(ops.matmul(r_loc, Tensor(p.reshape(3, 1))), (3,)))
        else:
            r_loc = np.eye(3) if dof < 0 else axis_angle_matrix(rig.axes[j], curls[dof])
            t_loc = p - r_loc @ p
        par = rig.parents[j]
        if par < 0:
            rots.append(r_loc)
            trans.append(t_loc)
            continue
        rp, tp = rots[par], trans[par]
        if tensor:
            rots.append(ops.matmul(rp, r_loc))
            trans.append(ops.add(ops.reshape(ops.matmul(rp, ops.reshape(t_loc, (3, 1))), (3,)), tp))
        else:
            rots.append(rp @ r_loc)
            trans.append(rp @ t_loc + tp)
    return rots, trans


def apply_pose(mesh: TriMesh, pose) -> np.ndarray | Tensor:
    """Posed vertices: linear blend skinning over the joint chain, then the
    global rotation (about the model origin) and translation.

    ``pose`` is a :class:`PoseParams` (numpy result) or an 11-vector Tensor
    laid out ``[rotation(3), translation(3), curls]`` (differentiable result).
    """
    if mesh.rig is None:
        raise ValueError("mesh has no rig")
    w = mesh.rig.weights
    if isinstance(pose, Tensor):
        rot_g = rodrigues(pose[0:3])
        rots, trans = joint_transforms(mesh, pose[NUM_GLOBAL:])
        r = ops.stack(rots)                                   # J×3×3
        t = ops.reshape(ops.stack(trans), (len(trans), 1, 3))
        v = Tensor(mesh.vertices)
        per_joint = ops.add(ops.matmul(v, ops.transpose(r, (0, 2, 1))), t)   # J×V×3
        wt = Tensor(w.T[:, :, None])
        skinned = ops.sum_(ops.mul(per_joint, wt), axis=0)
        return ops.add(ops.matmul(skinned, ops.transpose(rot_g)), pose[3:6])
    rots, trans = joint_transforms(mesh, pose.curls)
    r = np.stack(rots)
    t = np.stack(trans)
    per_joint = np.einsum("vk,jlk->jvl", mesh.vertices, r) + t[:, None, :]
    skinned = np.einsum("vj,jvl->vl", w, per_joint)
    return skinned @ rodrigues(pose.global_rotation).T + pose.translation


def keypoints_3d(mesh: TriMesh, posed_vertices):
    if isinstance(posed_vertices, Tensor):
        return ops.take_rows(posed_vertices, mesh.keypoint_vertex_ids)
    return posed_vertices[mesh.keypoint_vertex_ids]
