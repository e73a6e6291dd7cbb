"""Weakly supervised warm-up of the texture model on synthetic scenes."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from texhand.diffcore import Params, Tensor, backward, no_grad, ops
from texhand.geom.handasset import toy_hand
from texhand.geom.mesh import TriMesh
from texhand.geom.rig import PoseParams, apply_pose
from texhand.lossmetrics import LossConfig, MetricReport, MetricWriter, l1_255, ssim, weak_loss
from texhand.sampler import SampleSet, SupervisionTarget, extract_samples, splat_to_uv
from texhand.synthtrain.data import SceneSample, atlas_mask
from texhand.synthtrain.optim import Adam
from texhand.texnet import TexModelConfig, save_model, tex_forward

log = logging.getLogger(__name__)

VARIANTS = ("H", "H&M", "H&M*")


def hand_span(mesh: TriMesh | None = None) -> float:
    v = (mesh or toy_hand()).vertices
    return float(np.linalg.norm(v.max(0) - v.min(0)))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 4000
    lr_schedule: str = "cosine"      # "constant" or "cosine" (linear ramp, then cosine decay)
    lr_warmup: int = 100
    lr_final: float = 0.05           # final lr as a fraction of ``lr`` (cosine only)
    batch_size: int = 4
    seed: int = 0
    variant: str = "H&M"
    color_range: float = 0.25
    sigma_rot: float = 0.1
    sigma_trans: float = 0.02        # fraction of the hand span
    sigma_curl: float = 0.15
    parametric_fraction: float = 0.3
    min_density: int = 100
    max_density: int = 4096
    eval_every: int = 250
    eval_scenes: int = 16
    checkpoint_every: int = 1000
    refine_lr: float = 1e-2
    refine_steps: int = 40
    finetune_steps: int = 60

    def validate(self) -> None:
        if self.lr < 0 or self.refine_lr < 0:
            raise ValueError("train.lr must be >= 0")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("train.steps must be >= 0 and train.batch_size >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"train.variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0 <= self.parametric_fraction <= 1:
            raise ValueError("train.parametric_fraction must lie in [0, 1]")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"train.lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if not 1 <= self.min_density <= self.max_density:
            raise ValueError("train.min_density must be in [1, train.max_density]")
        if not 0 <= self.color_range <= 0.5:
            raise ValueError("train.color_range must lie in [0, 0.5]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Learning rate for 1-based ``step``."""
    if cfg.lr_schedule == "constant":
        return cfg.lr
    if step <= cfg.lr_warmup:
        return cfg.lr * step / cfg.lr_warmup
    span = max(cfg.steps - cfg.lr_warmup, 1)
    t = min((step - cfg.lr_warmup) / span, 1.0)
    return cfg.lr * (cfg.lr_final + (1 - cfg.lr_final) * 0.5 * (1 + np.cos(np.pi * t)))


class TrainingDiverged(RuntimeError):
    pass


def perturb_pose(pose: PoseParams, rng: np.random.Generator, cfg: TrainConfig, span: float) -> PoseParams:
    """Simulated estimator error: Gaussian noise on rotation, translation and curls."""
    return PoseParams(pose.global_rotation + rng.normal(0.0, cfg.sigma_rot, 3),
                      pose.translation + rng.normal(0.0, cfg.sigma_trans * span, 3),
                      np.clip(pose.curls + rng.normal(0.0, cfg.sigma_curl, len(pose.curls)), 0.0, np.pi))


def texture_samples(texture: np.ndarray, n: int, rng: np.random.Generator, mask: np.ndarray) -> SampleSet:
    """Draw ``n`` observations directly in texture space, inside the atlas."""
    s = texture.shape[-1]
    rows, cols = np.nonzero(mask)
    pick = rng.integers(0, len(rows), n)
    jitter = rng.uniform(-0.5, 0.5, (n, 2))
    uv = np.clip((np.stack([cols[pick], rows[pick]], 1) + jitter) / (s - 1), 0.0, 1.0)
    with no_grad():
        color = ops.bilinear_sample(Tensor(texture, dtype=np.float64), Tensor(uv, dtype=np.float64)).data
    return SampleSet(uv, np.clip(color, 0.0, 1.0))


def draw_density(rng: np.random.Generator, cfg: TrainConfig) -> int:
    lo, hi = np.log(cfg.min_density), np.log(cfg.max_density)
    return int(round(np.exp(rng.uniform(lo, hi))))


def training_pair(scene: SceneSample, rng: np.random.Generator, cfg: TrainConfig, mesh: TriMesh,
                  span: float) -> tuple[SampleSet, SupervisionTarget]:
    """One (observation set, supervision target) pair.

    With probability ``parametric_fraction`` the observations are drawn in
    texture space and the target is the full ground-truth map; otherwise they
    are back-projected from the image under a perturbed pose and the target
    is their own (imperfect) UV splat.  Every pair gets a random global colour
    shift of up to ``color_range`` per channel.
    """
    s = scene.gt_texture.shape[-1]
    n = draw_density(rng, cfg)
    shift = rng.uniform(-cfg.color_range, cfg.color_range, 3)
    if rng.random() < cfg.parametric_fraction:
        texture = np.clip(scene.gt_texture + shift[:, None, None], 0.0, 1.0)
        samples = texture_samples(texture, n, rng, atlas_mask(s))
        return samples, SupervisionTarget(texture, np.ones((s, s)))
    pose = perturb_pose(scene.gt_pose, rng, cfg, span)
    verts = apply_pose(mesh, pose)
    samples = extract_samples(scene.image, verts, mesh.faces, mesh.face_uvs, scene.camera,
                              max_L=n, seed=int(rng.integers(2 ** 31)))
    samples = SampleSet(samples.uv, np.clip(samples.color + shift, 0.0, 1.0))
    return samples, splat_to_uv(samples, s, s)


def observation_set(scene: SceneSample, mesh: TriMesh, pose: PoseParams | None = None,
                    max_L: int = 4096, seed: int = 0) -> SampleSet:
    verts = apply_pose(mesh, pose or scene.gt_pose)
    return extract_samples(scene.image, verts, mesh.faces, mesh.face_uvs, scene.camera, max_L=max_L, seed=seed)


def predict_texture(samples: SampleSet, params: Params, config: TexModelConfig) -> np.ndarray:
    with no_grad():
        return tex_forward(samples, params, config).data.astype(np.float64)


@dataclass
class EvalSet:
    samples: list
    targets: list
    textures: list


def build_eval_set(scenes: list[SceneSample], n: int, mesh: TriMesh | None = None) -> EvalSet:
    mesh = mesh or toy_hand()
    samples, targets, textures = [], [], []
    for i, sc in enumerate(scenes[:n]):
        obs = observation_set(sc, mesh, seed=i)
        s = sc.gt_texture.shape[-1]
        samples.append(obs)
        targets.append(splat_to_uv(obs, s, s))
        textures.append(sc.gt_texture)
    return EvalSet(samples, targets, textures)


def evaluate_weak(params: Params, config: TexModelConfig, ev: EvalSet, lcfg: LossConfig) -> dict:
    losses, l1s, ssims = [], [], []
    with no_grad():
        for obs, tgt, gt in zip(ev.samples, ev.targets, ev.textures):
            pred = tex_forward(obs, params, config)
            loss, _ = weak_loss(pred, tgt, lcfg)
            losses.append(float(loss.data))
            t = pred.data.astype(np.float64)
            l1s.append(l1_255(t, gt))
            ssims.append(ssim(t, gt))
    return {"weak_loss": float(np.mean(losses)), "l1": float(np.mean(l1s)), "ssim": float(np.mean(ssims))}


@dataclass
class WarmupResult:
    params: Params
    curve: list            # (step, split, weak_loss)
    init_eval: dict
    final_eval: dict
    steps_run: int


def _write_curve(path: Path, curve: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "split", "weak_loss"])
        for step, split, val in curve:
            w.writerow([step, split, repr(float(val))])


def warmup_train(params: Params, config: TexModelConfig, train_scenes: list[SceneSample],
                 eval_scenes: list[SceneSample], tcfg: TrainConfig, lcfg: LossConfig,
                 out_dir=None, run_id: str = "warmup", mesh: TriMesh | None = None) -> WarmupResult:
    """Minimise the weak loss with Adam; logs train/held-out curves and checkpoints.

    Aborts with :class:`TrainingDiverged` when the training loss exceeds ten
    times its initial value for 100 consecutive steps.
    """
    tcfg.validate()
    if not train_scenes:
        raise ValueError("warm-up needs at least one training scene")
    mesh = mesh or toy_hand()
    span = hand_span(mesh)
    out = Path(out_dir) if out_dir else None
    writer = None
    if out:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        writer = MetricWriter(out / "metrics.csv", run_id)
    opt = Adam(params.trainable(), tcfg.lr, (tcfg.beta1, tcfg.beta2), tcfg.eps)
    ev = build_eval_set(eval_scenes, tcfg.eval_scenes, mesh)
    curve = []

    def run_eval(step):
        res = evaluate_weak(params, config, ev, lcfg)
        curve.append((step, "eval", res["weak_loss"]))
        if writer:
            writer.write(step, "eval", MetricReport(l1=res["l1"], ssim=res["ssim"]))
        log.info("step %d eval weak_loss %.5f l1 %.2f ssim %.4f", step, res["weak_loss"], res["l1"], res["ssim"])
        return res

    init_eval = run_eval(0) if ev.samples else {}
    final_eval = init_eval
    first_loss = None
    over = 0
    step = 0
    for step in range(1, tcfg.steps + 1):
        rng = np.random.default_rng([tcfg.seed, step])
        opt.lr = learning_rate(step, tcfg)
        opt.zero_grad()
        total = None
        for _ in range(tcfg.batch_size):
            scene = train_scenes[int(rng.integers(len(train_scenes)))]
            samples, target = training_pair(scene, rng, tcfg, mesh, span)
            loss, _ = weak_loss(tex_forward(samples, params, config), target, lcfg)
            total = loss if total is None else ops.add(total, loss)
        total = ops.mul(total, 1.0 / tcfg.batch_size)
        value = float(total.data)
        backward(total)
        opt.step()
        curve.append((step, "train", value))
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite weak loss at step {step}")
        first_loss = value if first_loss is None else first_loss
        over = over + 1 if value > 10 * first_loss else 0
        if over >= 100:
            raise TrainingDiverged(f"weak loss above 10x its initial value ({first_loss:.4g}) "
                                   f"for 100 consecutive steps (step {step}, loss {value:.4g})")
        if ev.samples and (step % tcfg.eval_every == 0 or step == tcfg.steps):
            final_eval = run_eval(step)
        if out and tcfg.checkpoint_every and step % tcfg.checkpoint_every == 0:
            save_model(out / "checkpoints" / f"step_{step:06d}.ckpt", params, config, {"step": step})
    if out:
        save_model(out / "model.ckpt", params, config, {"step": step})
        _write_curve(out / "curve.csv", curve)
    return WarmupResult(params, curve, init_eval, final_eval, step)

