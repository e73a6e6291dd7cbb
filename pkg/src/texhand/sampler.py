"""UV-RGB observation extraction and sparse UV supervision targets."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from texhand.geom.camera import Camera
from texhand.geom.raster import FragmentBuffer, rasterize

DEFAULT_MAX_L = 4096


@dataclass
class SampleSet:
    """Unordered set of (uv, rgb) observations."""

    uv: np.ndarray      # L×2 in [0,1]²
    color: np.ndarray   # L×3 in [0,1]³

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(-1, 3)
        if len(self.uv) != len(self.color):
            raise ValueError(f"{len(self.uv)} uvs vs {len(self.color)} colors")

    def __len__(self) -> int:
        return len(self.uv)

    @classmethod
    def empty(cls) -> "SampleSet":
        return cls(np.zeros((0, 2)), np.zeros((0, 3)))

    def take(self, index) -> "SampleSet":
        return SampleSet(self.uv[index], self.color[index])

    def validate(self) -> None:
        if len(self) and (self.uv.min() < 0 or self.uv.max() > 1):
            raise ValueError("sample uv outside [0,1]²")
        if len(self) and (self.color.min() < 0 or self.color.max() > 1):
            raise ValueError("sample color outside [0,1]³")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "v", "r", "g", "b"])
            for (u, v), (r, g, b) in zip(self.uv.tolist(), self.color.tolist()):
                w.writerow([repr(u), repr(v), repr(r), repr(g), repr(b)])

    @classmethod
    def from_csv(cls, path) -> "SampleSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["u", "v", "r", "g", "b"]:
            raise ValueError(f"{path}: expected header u,v,r,g,b")
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64).reshape(-1, 5)
        return cls(data[:, :2], data[:, 2:])


@dataclass
class SupervisionTarget:
    t_star: np.ndarray   # 3×H×W, zero off-mask
    mask: np.ndarray     # H×W in {0,1}

    @property
    def density(self) -> float:
        return float(self.mask.sum() / self.mask.size)


def subsample(samples: SampleSet, n: int, seed) -> SampleSet:
    """Uniform draw of ``n`` entries without replacement (input order kept)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n >= len(samples):
        return samples
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(samples), size=n, replace=False))
    return samples.take(idx)


def extract_samples(image: np.ndarray, vertices, faces, face_uvs, camera: Camera,
                    max_L: int = DEFAULT_MAX_L, seed=0, fragments: FragmentBuffer | None = None) -> SampleSet:
    """Back-project every covered pixel: (fragment uv, image colour at the pixel).

    Pixels are enumerated in row-major order; above ``max_L`` a uniform
    subset is kept.
    """
    _, h, w = image.shape
    if fragments is None:
        fragments = rasterize(vertices, faces, face_uvs, camera, w, h)
    cov = fragments.coverage
    if not cov.any():
        return SampleSet.empty()
    uv = fragments.uv[cov]
    color = np.clip(image.transpose(1, 2, 0)[cov], 0.0, 1.0)
    return subsample(SampleSet(uv, color), max_L, seed)


def texel_index(uv: np.ndarray, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest texel (row, col) under the corner-aligned texel-centre convention."""
    col = np.clip(np.rint(uv[:, 0] * (w - 1)), 0, w - 1).astype(np.intp)
    row = np.clip(np.rint(uv[:, 1] * (h - 1)), 0, h - 1).astype(np.intp)
    return row, col


def splat_to_uv(samples: SampleSet, h: int, w: int) -> SupervisionTarget:
    """Scatter samples to their nearest texel; shared texels hold the mean colour."""
    t_star = np.zeros((3, h, w))
    mask = np.zeros((h, w))
    if len(samples) == 0:
        return SupervisionTarget(t_star, mask)
    row, col = texel_index(samples.uv, h, w)
    flat = row * w + col
    counts = np.bincount(flat, minlength=h * w)
    hit = counts > 0
    for ch in range(3):
        sums = np.bincount(flat, weights=samples.color[:, ch], minlength=h * w)
        t_star[ch].reshape(-1)[hit] = sums[hit] / counts[hit]
    mask.reshape(-1)[hit] = 1.0
    return SupervisionTarget(t_star, mask)


def write_samples_csv(path, samples: SampleSet) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    samples.to_csv(path)
