"""Weak-supervision texture loss, total objective, and evaluation metrics."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from texhand.diffcore import Tensor, ops
from texhand.sampler import SupervisionTarget

PCK_THRESHOLDS = (0.05, 0.10, 0.15)
METRIC_COLUMNS = ("run_id", "step", "split", "l1", "ssim", "pck05", "pck10", "pck15")


@dataclass
class LossConfig:
    lambda_freq: float = 0.01
    lambda_tex: float = 0.5
    w_keypoint: float = 1.0
    w_param: float = 1.0

    def validate(self) -> None:
        for name, val in asdict(self).items():
            if val < 0:
                raise ValueError(f"loss.{name} must be >= 0, got {val}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**d)


def weak_loss(predicted: Tensor, target: SupervisionTarget, cfg: LossConfig) -> tuple[Tensor, dict]:
    """Masked L1 on observed texels plus ``lambda_freq`` × an L1 distance
    between per-channel DFT magnitudes of the masked prediction and target.

    The L1 term is averaged over observed texels × 3 channels, the Fourier
    term over all texels.
    """
    if tuple(predicted.shape) != target.t_star.shape:
        raise ValueError(f"prediction {predicted.shape} vs target {target.t_star.shape}")
    _, h, w = target.t_star.shape
    mask = Tensor(target.mask[None])
    t_star = Tensor(target.t_star)
    n_obs = float(target.mask.sum())
    if n_obs == 0:
        zero = ops.mul(ops.sum_(predicted), 0.0)
        return zero, {"l1": 0.0, "fourier": 0.0, "total": 0.0}
    masked = ops.mul(predicted, mask)
    l1 = ops.mul(ops.sum_(ops.absolute(ops.sub(masked, ops.mul(t_star, mask)))), 1.0 / (3 * n_obs))
    mag_pred = ops.dft2_magnitude(masked)
    mag_tgt = np.abs(np.fft.fft2(target.t_star * target.mask[None], axes=(-2, -1)))
    fourier = ops.mul(ops.sum_(ops.absolute(ops.sub(mag_pred, Tensor(mag_tgt)))), 1.0 / (h * w))
    total = ops.add(l1, ops.mul(fourier, cfg.lambda_freq))
    return total, {"l1": float(l1.data), "fourier": float(fourier.data), "total": float(total.data)}


def base_loss(pred_kp, gt_kp, pred_params, gt_params, bbox_size: float, cfg: LossConfig) -> tuple[Tensor, dict]:
    """Toy estimator loss: keypoint L1 (in bbox units) + parameter L2."""
    kp = ops.mul(ops.mean(ops.absolute(ops.sub(pred_kp, Tensor(gt_kp)))), 1.0 / bbox_size)
    par = ops.mean(ops.power(ops.sub(pred_params, Tensor(gt_params)), 2))
    total = ops.add(ops.mul(kp, cfg.w_keypoint), ops.mul(par, cfg.w_param))
    return total, {"keypoint": float(kp.data), "param": float(par.data)}


def total_loss(base: Tensor, photometric: Tensor, cfg: LossConfig) -> tuple[Tensor, dict]:
    """L_base + lambda_tex · L_tex."""
    breakdown = {"base": float(base.data), "photometric": float(photometric.data)}
    if cfg.lambda_tex == 0:
        total = base
    else:
        total = ops.add(base, ops.mul(photometric, cfg.lambda_tex))
    breakdown["total"] = float(total.data)
    return total, breakdown


# -- metrics -----------------------------------------------------------------

def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5, k1: float = 0.01,
         k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM over the valid window positions, averaged over channels.

    Accepts H×W or C×H×W arrays.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim extent mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < window:
        raise ValueError(f"images smaller than the {window}×{window} window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    scores = []
    for x, y in zip(a, b):
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def l1_255(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference on the 0–255 scale."""
    return float(np.mean(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))) * 255.0)


def pck(pred: np.ndarray, gt: np.ndarray, bbox_size: float, thresholds=PCK_THRESHOLDS) -> np.ndarray:
    """Percent of keypoints within ``threshold · bbox_size`` pixels, per threshold."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    if len(gt) == 0:
        raise ValueError("pck needs at least one keypoint")
    if bbox_size <= 0:
        raise ValueError("bbox size must be positive")
    dist = np.linalg.norm(pred - gt, axis=1)
    return np.array([100.0 * np.mean(dist <= t * bbox_size) for t in thresholds])


@dataclass
class MetricReport:
    l1: float | None = None
    ssim: float | None = None
    pck: list = field(default_factory=list)

    def row(self, run_id: str, step: int, split: str) -> list:
        pcks = list(self.pck) + [None] * (3 - len(self.pck))
        return [run_id, step, split, self.l1, self.ssim, *pcks]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


class MetricWriter:
    """Appends rows to ``metrics.csv`` with the fixed column order."""

    def __init__(self, path, run_id: str):
        self.path = Path(path)
        self.run_id = run_id
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRIC_COLUMNS)

    def write(self, step: int, split: str, report: MetricReport) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(v) for v in report.row(self.run_id, step, split)])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
