"""Toy pose head and the H / H&M / H&M* fine-tuning variants."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from texhand.diffcore import Params, Tensor, backward, no_grad, ops
from texhand.diffcore.nn import init_conv, init_linear
from texhand.geom.camera import project
from texhand.geom.handasset import toy_hand
from texhand.geom.mesh import TriMesh
from texhand.geom.raster import rasterize
from texhand.geom.rig import NUM_GLOBAL, PoseParams, apply_pose, keypoints_3d
from texhand.lossmetrics import LossConfig, MetricReport, MetricWriter, base_loss, pck, total_loss
from texhand.render import photometric_loss, render_textured
from texhand.sampler import extract_samples
from texhand.synthtrain.data import SceneConfig, SceneSample
from texhand.synthtrain.optim import Adam
from texhand.synthtrain.warmup import VARIANTS, TrainConfig
from texhand.texnet import TexModelConfig, init_params, tex_forward

HEAD_CHANNELS = (8, 16, 16)
INPUT_POOL = 4


@dataclass
class ToyHead:
    """Conv encoder + linear readout predicting a pose offset from the mean scene pose."""

    params: Params
    mean_pose: np.ndarray
    scale: np.ndarray

    @classmethod
    def init(cls, seed: int, image_size: int = 128, dof: int | None = None,
             scene_cfg: SceneConfig | None = None) -> "ToyHead":
        scene_cfg = scene_cfg or SceneConfig()
        dof = dof or NUM_GLOBAL + toy_hand().rig.num_curls
        rng = np.random.default_rng(seed)
        p = Params()
        c_in = 3
        for i, c in enumerate(HEAD_CHANNELS):
            init_conv(p, f"head.conv{i}", c_in, c, 3, rng)
            c_in = c
        side = image_size // INPUT_POOL // 2 ** len(HEAD_CHANNELS)
        init_linear(p, "head.out", c_in * side * side, dof, rng)
        p["head.out.w"].data *= 0.1
        curl_mid = 0.5 * (scene_cfg.curl_range[0] + scene_cfg.curl_range[1])
        mean = np.concatenate([np.zeros(3), np.asarray(scene_cfg.center, float), np.full(dof - 6, curl_mid)])
        scale = np.concatenate([np.asarray(scene_cfg.rot_range, float), np.asarray(scene_cfg.trans_range, float),
                                np.full(dof - 6, 0.5 * (scene_cfg.curl_range[1] - scene_cfg.curl_range[0]))])
        return cls(p, mean, scale)

    @property
    def dof(self) -> int:
        return len(self.mean_pose)

    def forward(self, image: np.ndarray) -> Tensor:
        c, h, w = image.shape
        pooled = image.reshape(c, h // INPUT_POOL, INPUT_POOL, w // INPUT_POOL, INPUT_POOL).mean(axis=(2, 4))
        x = Tensor(pooled)
        for i in range(len(HEAD_CHANNELS)):
            x = ops.avg_pool2d(ops.gelu(ops.conv2d(x, self.params[f"head.conv{i}.w"], self.params[f"head.conv{i}.b"])), 2)
        flat = ops.reshape(x, (1, -1))
        out = ops.reshape(ops.add(ops.matmul(flat, self.params["head.out.w"]), self.params["head.out.b"]), (-1,))
        return ops.add(Tensor(self.mean_pose), ops.mul(out, Tensor(self.scale)))

    def predict(self, image: np.ndarray) -> PoseParams:
        with no_grad():
            vec = self.forward(image).data.astype(np.float64)
        pose = PoseParams.from_vector(vec)
        return pose.clamp_curls(toy_hand().rig.curl_limits)


def _keypoints_2d_tensor(mesh: TriMesh, pose_vec: Tensor, camera):
    verts = apply_pose(mesh, pose_vec)
    pix, _ = project(keypoints_3d(mesh, verts), camera)
    return verts, pix


def head_pck(head: ToyHead, scenes: list[SceneSample], mesh: TriMesh | None = None) -> np.ndarray:
    mesh = mesh or toy_hand()
    scores = []
    for sc in scenes:
        pose = head.predict(sc.image)
        pix, _ = project(keypoints_3d(mesh, apply_pose(mesh, pose)), sc.camera)
        scores.append(pck(pix, sc.gt_keypoints_2d, sc.bbox_size))
    return np.mean(scores, axis=0)


def finetune_step(head: ToyHead, tex_params: Params, tex_config: TexModelConfig, scene: SceneSample,
                  lcfg: LossConfig, train_texture: bool, mesh: TriMesh, seed: int):
    """ℒ_base + λ_tex · ℒ_tex for one scene; returns the scalar loss and its breakdown."""
    pose_vec = head.forward(scene.image)
    verts, kp = _keypoints_2d_tensor(mesh, pose_vec, scene.camera)
    base, parts = base_loss(kp, scene.gt_keypoints_2d, pose_vec, scene.gt_pose.to_vector(), scene.bbox_size, lcfg)
    photo = Tensor(0.0)
    if lcfg.lambda_tex > 0:
        _, h, w = scene.image.shape
        pose_np = PoseParams.from_vector(pose_vec.data.astype(np.float64)).clamp_curls(mesh.rig.curl_limits)
        verts_np = apply_pose(mesh, pose_np)
        frags = rasterize(verts_np, mesh.faces, mesh.face_uvs, scene.camera, w, h)
        if frags.coverage.any():
            samples = extract_samples(scene.image, verts_np, mesh.faces, mesh.face_uvs, scene.camera,
                                      seed=seed, fragments=frags)
            if train_texture:
                texture = tex_forward(samples, tex_params, tex_config)
            else:
                with no_grad():
                    texture = Tensor(tex_forward(samples, tex_params, tex_config).data)
            out = render_textured(verts, mesh.faces, mesh.face_uvs, texture, scene.camera, w, h, fragments=frags)
            photo = photometric_loss(scene.image, out)
    total, breakdown = total_loss(base, photo, lcfg)
    breakdown.update(parts)
    return total, breakdown


@dataclass
class VariantResult:
    variant: str
    pck: np.ndarray
    texture_checksum_before: str
    texture_checksum_after: str

    @property
    def texture_changed(self) -> bool:
        return self.texture_checksum_before != self.texture_checksum_after


def train_variant(variant: str, head_seed: int, tex_params: Params, tex_config: TexModelConfig,
                  train_scenes: list[SceneSample], tcfg: TrainConfig, lcfg: LossConfig,
                  mesh: TriMesh | None = None) -> tuple[ToyHead, Params, VariantResult]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    mesh = mesh or toy_hand()
    head = ToyHead.init(head_seed, train_scenes[0].size)
    if variant == "H&M*":
        tex = init_params(tex_config, seed=tcfg.seed)
    else:
        tex = tex_params.copy()
    before = tex.checksum()
    train_texture = variant != "H"
    groups = dict(head.params.trainable())
    if train_texture:
        groups.update(tex.trainable())
    opt = Adam(groups, tcfg.lr, (tcfg.beta1, tcfg.beta2), tcfg.eps)
    for step in range(1, tcfg.finetune_steps + 1):
        rng = np.random.default_rng([tcfg.seed, 7919, step])
        scene = train_scenes[int(rng.integers(len(train_scenes)))]
        opt.zero_grad()
        total, _ = finetune_step(head, tex, tex_config, scene, lcfg, train_texture, mesh, int(rng.integers(2 ** 31)))
        backward(total)
        opt.step()
    return head, tex, VariantResult(variant, np.zeros(3), before, tex.checksum())


def finetune_variants(tex_params: Params, tex_config: TexModelConfig, train_scenes: list[SceneSample],
                      eval_scenes: list[SceneSample], tcfg: TrainConfig, lcfg: LossConfig,
                      variants=VARIANTS, out_dir=None, run_id: str = "finetune") -> list[VariantResult]:
    """Train the toy head under each variant's freeze contract and score PCK on ``eval_scenes``."""
    mesh = toy_hand()
    writer = MetricWriter(Path(out_dir) / "metrics.csv", run_id) if out_dir else None
    results = []
    for variant in variants:
        head, _, res = train_variant(variant, tcfg.seed, tex_params, tex_config, train_scenes, tcfg, lcfg, mesh)
        res.pck = head_pck(head, eval_scenes, mesh)
        results.append(res)
        if writer:
            writer.write(tcfg.finetune_steps, f"eval:{variant}", MetricReport(pck=res.pck.tolist()))
    if out_dir:
        write_variant_table(Path(out_dir) / "variants.csv", results)
    return results


def write_variant_table(path, results: list[VariantResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "pck05", "pck10", "pck15", "texture_updated"])
        for r in results:
            w.writerow([r.variant, *(f"{x:.2f}" for x in r.pck), int(r.texture_changed)])
