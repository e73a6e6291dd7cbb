"""Procedural textures, clutter backgrounds and synthetic desk scenes."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from texhand.geom.camera import Camera, project
from texhand.geom.handasset import toy_hand
from texhand.geom.mesh import TriMesh
from texhand.geom.raster import FragmentBuffer, rasterize
from texhand.geom.rig import PoseParams, apply_pose, keypoints_3d
from texhand.imageio import read_ppm, write_ppm
from texhand.render import render_textured

SKIN_PALETTE = (
    (0.96, 0.80, 0.69),
    (0.91, 0.72, 0.58),
    (0.82, 0.62, 0.48),
    (0.71, 0.51, 0.38),
    (0.55, 0.38, 0.27),
    (0.40, 0.27, 0.19),
)


@dataclass
class TextureConfig:
    size: int = 64
    palette: tuple = SKIN_PALETTE
    tone_jitter: float = 0.03
    noise_amplitude: float = 0.035
    crease_darkness: float = 0.22
    nail_tint: tuple = (0.12, 0.02, 0.04)
    palm_lift: float = 0.06
    shift: tuple = (0.0, 0.0, 0.0)      # global colour offset δ, applied before clamping

    def to_dict(self) -> dict:
        d = asdict(self)
        d["palette"] = [list(p) for p in self.palette]
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TextureConfig":
        d = dict(d)
        d["palette"] = tuple(tuple(p) for p in d.get("palette", SKIN_PALETTE))
        for k in ("nail_tint", "shift"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SceneConfig:
    image_size: int = 128
    focal: float = 250.0
    distance: float = 45.0
    distance_jitter: float = 0.05
    principal_jitter: float = 3.0
    center: tuple = (0.0, -3.0, 0.0)     # hand offset so the whole rig sits in frame
    rot_range: tuple = (0.35, 0.8, 0.3)
    trans_range: tuple = (1.2, 1.2, 3.0)
    curl_range: tuple = (0.0, 1.2)
    color_range: float = 0.08
    texture: TextureConfig = field(default_factory=TextureConfig)

    def to_dict(self) -> dict:
        d = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}
        d["texture"] = self.texture.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        tex = TextureConfig.from_dict(d.pop("texture", {}))
        for k in ("center", "rot_range", "trans_range", "curl_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(texture=tex, **d)

    def validate(self) -> None:
        if self.image_size < 8:
            raise ValueError("scene.image_size must be >= 8")
        if self.focal <= 0 or self.distance <= 0:
            raise ValueError("scene.focal and scene.distance must be positive")
        if not 0 <= self.color_range <= 0.5:
            raise ValueError("scene.color_range must lie in [0, 0.5]")
        lo, hi = self.curl_range
        if not 0 <= lo <= hi <= np.pi:
            raise ValueError("scene.curl_range must lie within the joint limits [0, pi]")


def texel_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    """uv coordinates of texel centres (corner-aligned): u along columns, v along rows."""
    t = np.arange(size) / (size - 1)
    return np.meshgrid(t, t)


@lru_cache(maxsize=8)
def _atlas_mask_cached(size: int, key: int) -> np.ndarray:
    mesh = toy_hand()
    return _atlas_mask(mesh.face_uvs, size)


def _atlas_mask(face_uvs: np.ndarray, size: int) -> np.ndarray:
    u, v = texel_grid(size)
    pts = np.stack([u.ravel(), v.ravel()], axis=1)
    mask = np.zeros(len(pts), dtype=bool)
    eps = 0.5 / (size - 1)
    for tri in face_uvs:
        lo, hi = tri.min(0) - eps, tri.max(0) + eps
        cand = np.nonzero(np.all((pts >= lo) & (pts <= hi), axis=1))[0]
        if not len(cand):
            continue
        a, b, c = tri
        m = np.array([b - a, c - a]).T
        det = np.linalg.det(m)
        if abs(det) < 1e-14:
            continue
        lam = np.linalg.solve(m, (pts[cand] - a).T).T
        l0 = 1 - lam.sum(1)
        # accept texels within half a texel of the triangle (bilinear support)
        scale = eps * np.array([np.linalg.norm(b - a) + np.linalg.norm(c - a) + np.linalg.norm(c - b)]) / abs(det)
        inside = (lam[:, 0] >= -scale) & (lam[:, 1] >= -scale) & (l0 >= -scale)
        mask[cand[inside]] = True
    return mask.reshape(size, size)


def atlas_mask(size: int, mesh: TriMesh | None = None) -> np.ndarray:
    """Texels touched by the UV atlas (dilated by half a texel)."""
    if mesh is None:
        return _atlas_mask_cached(size, 0)
    return _atlas_mask(mesh.face_uvs, size)


def _value_noise(rng: np.random.Generator, size: int, cells: int, channels: int) -> np.ndarray:
    grid = rng.standard_normal((channels, cells + 1, cells + 1))
    t = np.linspace(0, cells, size)
    i = np.minimum(t.astype(int), cells - 1)
    f = t - i
    f = f * f * (3 - 2 * f)
    rows = grid[:, i, :] * (1 - f)[None, :, None] + grid[:, i + 1, :] * f[None, :, None]
    return rows[:, :, i] * (1 - f)[None, None, :] + rows[:, :, i + 1] * f[None, None, :]


def _in_box(u, v, box):
    u0, v0, u1, v1 = box
    return (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)


def gen_texture(seed, cfg: TextureConfig | None = None, mesh: TriMesh | None = None) -> np.ndarray:
    """Procedural skin texture on the toy atlas (3×S×S, values in [0,1]).

    Layers: a palette skin tone, a lighter palm, smooth value noise, dark
    creases across every finger joint and the palm, and tinted nails on the
    back of each fingertip.
    """
    cfg = cfg or TextureConfig()
    mesh = mesh or toy_hand()
    rng = np.random.default_rng(seed)
    s = cfg.size
    u, v = texel_grid(s)
    tone = np.asarray(cfg.palette[rng.integers(len(cfg.palette))], dtype=np.float64)
    tone = tone + rng.normal(0.0, cfg.tone_jitter, 3)
    tex = np.broadcast_to(tone[:, None, None], (3, s, s)).copy()

    charts = mesh.charts
    palm = _in_box(u, v, charts["palm_front"])
    tex += cfg.palm_lift * palm[None]
    noise = 0.6 * _value_noise(rng, s, 4, 1) + 0.4 * _value_noise(rng, s, 8, 3)
    tex += cfg.noise_amplitude * noise

    texel = 1.0 / (s - 1)
    dark = np.zeros((s, s))
    names = ("thumb", "index", "middle", "ring", "pinky")
    for name in names:
        u0, v0, u1, v1 = charts[name]
        in_col = (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)
        jv = charts[name + "_joint_v"]
        strength = rng.uniform(0.7, 1.2)
        for centre, width in ((jv, 1.0), (v0 + 0.03, 0.8)):
            dark += strength * in_col * np.exp(-0.5 * ((v - centre) / (width * texel)) ** 2)
        # nail on the back of the tube (chart edges), just below the tip cap
        back = np.minimum(u - u0, u1 - u) < 0.22 * (u1 - u0)
        nail = in_col & back & (v > v1 - 0.16) & (v < v1 - 0.07)
        tex += np.asarray(cfg.nail_tint)[:, None, None] * nail[None]
    u0, v0, u1, v1 = charts["palm_front"]
    for _ in range(3):
        a = rng.uniform(0.25, 0.75)
        tilt = rng.uniform(-0.25, 0.25)
        bend = rng.uniform(-0.3, 0.3)
        x = (u - u0) / (u1 - u0)
        line_v = v0 + (v1 - v0) * (a + tilt * (x - 0.5) + bend * (x - 0.5) ** 2)
        dark += rng.uniform(0.6, 1.0) * palm * np.exp(-0.5 * ((v - line_v) / (0.9 * texel)) ** 2)
    tex *= 1.0 - cfg.crease_darkness * np.clip(dark, 0.0, 1.0)[None]
    tex += np.asarray(cfg.shift, dtype=np.float64)[:, None, None]
    return np.clip(tex, 0.0, 1.0)


def apply_color_shift(texture: np.ndarray, shift, gain=1.0) -> np.ndarray:
    shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (3,))
    gain = np.broadcast_to(np.asarray(gain, dtype=np.float64), (3,))
    return np.clip(texture * gain[:, None, None] + shift[:, None, None], 0.0, 1.0)


def color_randomize(texture: np.ndarray, seed, shift_range=0.1, gain_range=0.0) -> np.ndarray:
    """One global per-channel affine colour change, clamped to [0,1].

    ``shift_range`` (scalar or per channel, within [0, 0.5]) bounds the
    uniform offset; ``gain_range`` bounds the deviation of the gain from 1.
    """
    shift_range = np.broadcast_to(np.asarray(shift_range, dtype=np.float64), (3,))
    gain_range = np.broadcast_to(np.asarray(gain_range, dtype=np.float64), (3,))
    if np.any(shift_range < 0) or np.any(shift_range > 0.5):
        raise ValueError("colour shift range must lie within [0, 0.5]")
    if not shift_range.any() and not gain_range.any():
        return texture.copy()
    rng = np.random.default_rng(seed)
    shift = rng.uniform(-1.0, 1.0, 3) * shift_range
    gain = 1.0 + rng.uniform(-1.0, 1.0, 3) * gain_range
    return apply_color_shift(texture, shift, gain)


def clutter_background(seed, size: int) -> np.ndarray:
    """Desk-like clutter: smooth tinted noise with a few flat-coloured blocks and discs."""
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.15, 0.6, 3)
    img = base[:, None, None] + 0.12 * _value_noise(rng, size, 5, 3)
    rows, cols = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0.0, 1.0, 3)
        color[rng.integers(3)] *= 0.3           # keep clutter away from skin hues
        if rng.random() < 0.5:
            r0, c0 = rng.integers(0, size, 2)
            h, w = rng.integers(size // 10, size // 3, 2)
            m = (rows >= r0) & (rows < r0 + h) & (cols >= c0) & (cols < c0 + w)
        else:
            cr, cc = rng.uniform(0, size, 2)
            rad = rng.uniform(size / 20, size / 6)
            m = (rows - cr) ** 2 + (cols - cc) ** 2 <= rad ** 2
        img[:, m] = color[:, None]
    return np.clip(img, 0.0, 1.0)


@dataclass
class SceneSample:
    image: np.ndarray                 # 3×H×W
    gt_pose: PoseParams
    gt_texture: np.ndarray            # 3×S×S
    camera: Camera
    gt_keypoints_2d: np.ndarray       # N×2
    bbox_size: float
    scene_id: str = ""
    background: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.image.shape[-1]


def sample_pose(rng: np.random.Generator, cfg: SceneConfig) -> PoseParams:
    rot = rng.uniform(-1.0, 1.0, 3) * np.asarray(cfg.rot_range)
    trans = np.asarray(cfg.center) + rng.uniform(-1.0, 1.0, 3) * np.asarray(cfg.trans_range)
    curls = rng.uniform(cfg.curl_range[0], cfg.curl_range[1], 5)
    return PoseParams(rot, trans, curls)


def sample_camera(rng: np.random.Generator, cfg: SceneConfig) -> Camera:
    dist = cfg.distance * (1.0 + rng.uniform(-1.0, 1.0) * cfg.distance_jitter)
    cam = Camera.looking_at_origin(dist, cfg.focal, cfg.image_size, cfg.image_size)
    jitter = rng.uniform(-1.0, 1.0, 2) * cfg.principal_jitter
    cam.cx += float(jitter[0])
    cam.cy += float(jitter[1])
    return cam


def bbox_size(points_2d: np.ndarray) -> float:
    ext = points_2d.max(0) - points_2d.min(0)
    return float(max(ext.max(), 1.0))


def keypoints_2d(mesh: TriMesh, pose: PoseParams, camera: Camera) -> np.ndarray:
    verts = apply_pose(mesh, pose)
    pix, _ = project(keypoints_3d(mesh, verts), camera)
    return pix


def compose_image(mesh: TriMesh, pose: PoseParams, texture: np.ndarray, camera: Camera,
                  background: np.ndarray) -> tuple[np.ndarray, FragmentBuffer]:
    size = background.shape[-1]
    verts = apply_pose(mesh, pose)
    frags = rasterize(verts, mesh.faces, mesh.face_uvs, camera, size, size)
    out = render_textured(verts, mesh.faces, mesh.face_uvs, texture, camera, size, size, fragments=frags)
    image = np.where(frags.coverage[None], out.image.data.astype(np.float64), background)
    return image, frags


def gen_scene(seed, cfg: SceneConfig | None = None, mesh: TriMesh | None = None) -> SceneSample:
    """Draw pose, texture (with colour randomisation), camera jitter and clutter; render."""
    cfg = cfg or SceneConfig()
    mesh = mesh or toy_hand()
    ss = np.random.SeedSequence(seed if isinstance(seed, int) else list(seed))
    k_pose, k_tex, k_col, k_cam, k_bg = (int(c.generate_state(1)[0]) for c in ss.spawn(5))
    pose = sample_pose(np.random.default_rng(k_pose), cfg)
    texture = color_randomize(gen_texture(k_tex, cfg.texture, mesh), k_col, cfg.color_range)
    camera = sample_camera(np.random.default_rng(k_cam), cfg)
    background = clutter_background(k_bg, cfg.image_size)
    image, _ = compose_image(mesh, pose, texture, camera, background)
    verts = apply_pose(mesh, pose)
    pix, _ = project(verts, camera)
    kp = keypoints_2d(mesh, pose, camera)
    return SceneSample(image, pose, texture, camera, kp, bbox_size(pix), str(seed), background)


def gen_dataset(n: int, seed: int, cfg: SceneConfig | None = None, offset: int = 0) -> list[SceneSample]:
    """Scenes with per-scene seeds (seed, index): independent of generation order."""
    return [gen_scene((seed, offset + i), cfg) for i in range(n)]


# -- dataset directory IO ------------------------------------------------------

def write_scene(directory, scene: SceneSample) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_ppm(d / "image.ppm", scene.image)
    write_ppm(d / "texture.ppm", scene.gt_texture)
    (d / "pose.txt").write_text(" ".join(repr(float(x)) for x in scene.gt_pose.to_vector()) + "\n")
    (d / "camera.txt").write_text(json.dumps(scene.camera.to_dict(), sort_keys=True) + "\n")
    with open(d / "keypoints.csv", "w") as fh:
        fh.write("x,y\n")
        for x, y in scene.gt_keypoints_2d.tolist():
            fh.write(f"{x!r},{y!r}\n")
    return d


def read_scene(directory, mesh: TriMesh | None = None) -> SceneSample:
    d = Path(directory)
    for name in ("image.ppm", "pose.txt", "camera.txt", "texture.ppm", "keypoints.csv"):
        if not (d / name).exists():
            raise FileNotFoundError(f"scene {d} is missing {name}")
    mesh = mesh or toy_hand()
    image = read_ppm(d / "image.ppm")
    texture = read_ppm(d / "texture.ppm")
    pose = PoseParams.from_vector([float(x) for x in (d / "pose.txt").read_text().split()])
    camera = Camera.from_dict(json.loads((d / "camera.txt").read_text()))
    kp = np.loadtxt(d / "keypoints.csv", delimiter=",", skiprows=1, ndmin=2)
    pix, _ = project(apply_pose(mesh, pose), camera)
    return SceneSample(image, pose, texture, camera, kp, bbox_size(pix), d.name)


def write_dataset(root, train: list[SceneSample], eval_: list[SceneSample], config: dict | None = None) -> dict:
    root = Path(root)
    index = {"train": [], "eval": []}
    for split, scenes in (("train", train), ("eval", eval_)):
        for i, sc in enumerate(scenes):
            sid = f"{split}_{i:04d}"
            write_scene(root / "scenes" / sid, sc)
            index[split].append(sid)
    index["config"] = config or {}
    (root / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return index


def scene_dirs(root, split: str | None = None) -> list[Path]:
    root = Path(root)
    idx = root / "index.json"
    if idx.exists() and split is not None:
        ids = json.loads(idx.read_text()).get(split, [])
        return [root / "scenes" / s for s in ids]
    base = root / "scenes" if (root / "scenes").is_dir() else root
    if not base.is_dir():
        return []
    found = sorted(p for p in base.iterdir() if p.is_dir() and (p / "image.ppm").exists())
    if split is not None:
        found = [p for p in found if p.name.startswith(split)]
    return found


def load_dataset(root, split: str | None = None) -> list[SceneSample]:
    dirs = scene_dirs(root, split)
    mesh = toy_hand()
    return [read_scene(d, mesh) for d in dirs]
