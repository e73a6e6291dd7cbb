"""Analysis-by-synthesis pose refinement with a frozen texture model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from texhand.diffcore import Params, Tensor, backward, no_grad
from texhand.geom.camera import Camera, project
from texhand.geom.handasset import toy_hand
from texhand.geom.mesh import TriMesh
from texhand.geom.raster import rasterize
from texhand.geom.rig import PoseParams, apply_pose, keypoints_3d
from texhand.lossmetrics import LossConfig, total_loss
from texhand.render import photometric_loss, render_textured
from texhand.sampler import extract_samples
from texhand.synthtrain.optim import Adam
from texhand.texnet import TexModelConfig, tex_forward


class RefinementError(RuntimeError):
    pass


@dataclass
class RefineResult:
    pose: PoseParams
    best_step: int
    trace: list = field(default_factory=list)     # per step: {"step", "loss", "pose"}


def project_keypoints(mesh: TriMesh, pose: PoseParams, camera: Camera) -> np.ndarray:
    pix, _ = project(keypoints_3d(mesh, apply_pose(mesh, pose)), camera)
    return pix


def keypoint_error(mesh: TriMesh, pose: PoseParams, camera: Camera, gt_2d: np.ndarray) -> float:
    return float(np.linalg.norm(project_keypoints(mesh, pose, camera) - gt_2d, axis=1).mean())


def photometric_step(image: np.ndarray, pose_vec: Tensor, params: Params, config: TexModelConfig,
                     camera: Camera, mesh: TriMesh, max_L: int, seed: int):
    """Extract under the current pose, predict the texture, render, compare.

    The predicted texture is held constant; only the pose carries gradient.
    """
    _, h, w = image.shape
    verts_np = apply_pose(mesh, PoseParams.from_vector(pose_vec.data.astype(np.float64)))
    frags = rasterize(verts_np, mesh.faces, mesh.face_uvs, camera, w, h)
    if not frags.coverage.any():
        return None
    samples = extract_samples(image, verts_np, mesh.faces, mesh.face_uvs, camera, max_L=max_L, seed=seed,
                              fragments=frags)
    with no_grad():
        texture = tex_forward(samples, params, config).data
    verts = apply_pose(mesh, pose_vec)
    out = render_textured(verts, mesh.faces, mesh.face_uvs, Tensor(texture), camera, w, h, fragments=frags)
    return photometric_loss(image, out)


def refine_pose(image: np.ndarray, init_pose: PoseParams, params: Params, config: TexModelConfig,
                camera: Camera, steps: int = 40, lr: float = 1e-2, lcfg: LossConfig | None = None,
                mesh: TriMesh | None = None, max_L: int = 4096, seed: int = 0) -> RefineResult:
    """Descend λ_tex · photometric loss with respect to the pose only.

    Returns the pose with the lowest objective seen along the trajectory
    (ties keep the earliest, so a zero objective returns the initial pose).
    """
    lcfg = lcfg or LossConfig()
    mesh = mesh or toy_hand()
    pose_vec = Tensor(init_pose.to_vector(), requires_grad=True, dtype=np.float64)
    opt = Adam({"pose": pose_vec}, lr)
    zero = Tensor(0.0, dtype=np.float64)
    trace = []
    best = (np.inf, 0, init_pose.to_vector())
    for step in range(steps + 1):
        current = pose_vec.data.astype(np.float64).copy()
        photo = photometric_step(image, pose_vec, params, config, camera, mesh, max_L, seed)
        if photo is None:
            if step == 0:
                raise RefinementError("the initial pose covers no pixels; nothing to refine against")
            break
        total, parts = total_loss(zero, photo, lcfg)
        value = parts["total"]
        trace.append({"step": step, "loss": value, "photometric": parts["photometric"], "pose": current.tolist()})
        if value < best[0]:
            best = (value, step, current)
        if step == steps or lr == 0:
            break
        opt.zero_grad()
        if total.requires_grad:
            backward(total)
        opt.step()
        lo, hi = mesh.rig.curl_limits
        pose_vec.data[6:] = np.clip(pose_vec.data[6:], lo, hi)
    return RefineResult(PoseParams.from_vector(best[2]), best[1], trace)


@dataclass
class RefinementExperiment:
    err_init: np.ndarray
    err_final: np.ndarray
    pck_init: np.ndarray
    pck_final: np.ndarray

    @property
    def improved(self) -> np.ndarray:
        return self.err_final < self.err_init

    @property
    def improved_fraction(self) -> float:
        return float(np.mean(self.improved))

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("scene,err_init,err_final,improved\n")
            for i, (a, b) in enumerate(zip(self.err_init, self.err_final)):
                fh.write(f"{i},{a!r},{b!r},{int(b < a)}\n")


def refinement_experiment(scenes, params: Params, config: TexModelConfig, tcfg, lcfg: LossConfig,
                          mesh: TriMesh | None = None, seed: int = 0) -> RefinementExperiment:
    """Perturb each scene's ground-truth pose with the training noise ladder,
    refine, and compare 2D keypoint error and PCK before and after."""
    from texhand.lossmetrics import pck
    from texhand.synthtrain.warmup import hand_span, perturb_pose

    mesh = mesh or toy_hand()
    span = hand_span(mesh)
    err0, err1, pck0, pck1 = [], [], [], []
    for i, sc in enumerate(scenes):
        rng = np.random.default_rng([seed, 4242, i])
        init = perturb_pose(sc.gt_pose, rng, tcfg, span)
        res = refine_pose(sc.image, init, params, config, sc.camera, tcfg.refine_steps, tcfg.refine_lr, lcfg,
                          mesh, seed=i)
        for pose, errs, pcks in ((init, err0, pck0), (res.pose, err1, pck1)):
            kp = project_keypoints(mesh, pose, sc.camera)
            errs.append(float(np.linalg.norm(kp - sc.gt_keypoints_2d, axis=1).mean()))
            pcks.append(pck(kp, sc.gt_keypoints_2d, sc.bbox_size))
    return RefinementExperiment(np.array(err0), np.array(err1), np.mean(pck0, axis=0), np.mean(pck1, axis=0))
