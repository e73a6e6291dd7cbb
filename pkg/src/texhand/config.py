"""Run configuration: one serialisable tree merged from file, environment and flags.

Precedence (lowest to highest): defaults, ``--config`` JSON file, environment
variables ``TEXHAND__<SECTION>__<FIELD>`` (values parsed as JSON when
possible), command-line flags.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from texhand.lossmetrics import LossConfig
from texhand.synthtrain.data import SceneConfig
from texhand.synthtrain.warmup import TrainConfig
from texhand.texnet import TexModelConfig

ENV_PREFIX = "TEXHAND__"
PRECISIONS = ("f32", "f64")


@dataclass
class DataConfig:
    root: str = ""
    n_train: int = 512
    n_eval: int = 64

    def to_dict(self) -> dict:
        return {"root": self.root, "n_train": self.n_train, "n_eval": self.n_eval}

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        return cls(**d)


@dataclass
class RunConfig:
    texnet: TexModelConfig = field(default_factory=TexModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    threads: int = 1
    precision: str = "f32"
    out: str = "runs"

    SECTIONS = ("texnet", "train", "loss", "scene", "data")

    def to_dict(self) -> dict:
        d = {name: getattr(self, name).to_dict() for name in self.SECTIONS}
        d.update(seed=self.seed, threads=self.threads, precision=self.precision, out=self.out)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.SECTIONS) | {"seed", "threads", "precision", "out"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        kinds = {"texnet": TexModelConfig, "train": TrainConfig, "loss": LossConfig,
                 "scene": SceneConfig, "data": DataConfig}
        kw = {}
        for name, kind in kinds.items():
            if name in d:
                base = getattr(cls(), name).to_dict()
                section = dict(d[name])
                bad = set(section) - set(base)
                if bad:
                    raise ValueError(f"unknown field(s) in [{name}]: {', '.join(sorted(bad))}")
                base.update(section)
                kw[name] = kind.from_dict(base)
        for k in ("seed", "threads", "precision", "out"):
            if k in d:
                kw[k] = d[k]
        return cls(**kw)

    def validate(self) -> None:
        self.texnet.validate()
        self.train.validate()
        self.loss.validate()
        self.scene.validate()
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.data.n_train < 0 or self.data.n_eval < 0:
            raise ValueError("data.n_train and data.n_eval must be >= 0")

    def hashed_view(self) -> dict:
        """The parts of the config that influence results (thread count and output path excluded)."""
        d = self.to_dict()
        d.pop("threads")
        d.pop("out")
        return d

    @property
    def run_id(self) -> str:
        blob = json.dumps(self.hashed_view(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def run_dir(self, command: str) -> Path:
        return Path(self.out) / f"{command}-{self.run_id}"

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(tree: dict, dotted: str, value) -> None:
    """Assign ``tree[a][b] = value`` for ``dotted == "a.b"``; names the offending field on error."""
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ValueError(f"unknown config section {p!r} in {dotted!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ValueError(f"unknown config field {dotted!r}")
    node[parts[-1]] = value


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key, val in environ.items():
        if key.startswith(ENV_PREFIX):
            dotted = ".".join(p.lower() for p in key[len(ENV_PREFIX):].split("__"))
            out[dotted] = _parse_value(val)
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    tree = RunConfig().to_dict()
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            file_tree = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file {p} is not valid JSON: {exc}") from None
        tree = RunConfig.from_dict(file_tree).to_dict()
    merged = copy.deepcopy(tree)
    for dotted, val in env_overrides(environ).items():
        set_path(merged, dotted, val)
    for dotted, val in (overrides or {}).items():
        if val is not None:
            set_path(merged, dotted, val)
    cfg = RunConfig.from_dict(merged)
    # the global seed drives every seeded component
    cfg.train.seed = cfg.seed
    cfg.texnet.seed = cfg.seed
    cfg.validate()
    return cfg
