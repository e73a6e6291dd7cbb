"""Observation-density sweep: reconstruction quality versus visible UV pixels."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from texhand.diffcore import Params
from texhand.geom.handasset import toy_hand
from texhand.lossmetrics import l1_255, ssim
from texhand.sampler import subsample
from texhand.synthtrain.data import SceneSample
from texhand.synthtrain.warmup import observation_set, predict_texture
from texhand.texnet import TexModelConfig

DEFAULT_DENSITIES = (200, 500, 1000, 2000, None)     # None = every visible pixel


@dataclass
class DensityRow:
    density: int | None
    l1: float
    ssim: float
    mean_observed: float

    @property
    def label(self) -> str:
        return "ALL" if self.density is None else str(self.density)


def density_ablation(params: Params, config: TexModelConfig, scenes: list[SceneSample],
                     densities=DEFAULT_DENSITIES, seed: int = 0) -> list[DensityRow]:
    """Subsample each scene's back-projected observations to every density,
    reconstruct, and score against the full ground-truth UV map."""
    mesh = toy_hand()
    full = [observation_set(sc, mesh, max_L=sc.image.shape[1] * sc.image.shape[2]) for sc in scenes]
    rows = []
    for d in densities:
        l1s, ssims, counts = [], [], []
        for i, (sc, obs) in enumerate(zip(scenes, full)):
            sub = obs if d is None else subsample(obs, d, np.random.SeedSequence([seed, i, d]).generate_state(1)[0])
            tex = predict_texture(sub, params, config)
            l1s.append(l1_255(tex, sc.gt_texture))
            ssims.append(ssim(tex, sc.gt_texture))
            counts.append(len(sub))
        rows.append(DensityRow(d, float(np.mean(l1s)), float(np.mean(ssims)), float(np.mean(counts))))
    return rows


def format_table(rows: list[DensityRow]) -> str:
    lines = ["| # visible UV pixels | L1 ↓ | SSIM ↑ |", "|---|---|---|"]
    lines += [f"| {r.label} | {r.l1:.2f} | {r.ssim:.3f} |" for r in rows]
    return "\n".join(lines)


def write_table_csv(path, rows: list[DensityRow]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["density", "l1", "ssim", "mean_observed"])
        for r in rows:
            w.writerow([r.label, repr(r.l1), repr(r.ssim), repr(r.mean_observed)])


def weakly_monotone(rows: list[DensityRow], tol: float = 0.3) -> bool:
    """L1 of every sparser rung is at least any denser rung's L1 minus ``tol``
    (rows ordered sparse to dense)."""
    return all(rows[i].l1 >= rows[j].l1 - tol for i in range(len(rows)) for j in range(i + 1, len(rows)))
