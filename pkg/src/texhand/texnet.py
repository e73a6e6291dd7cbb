"""Set-attention texture model: sparse UV-RGB tokens → dense UV texture.

Colours are embedded per token, UV positions get random Fourier features,
the concatenated tokens (plus a learned null token) serve as keys/values for
a stack of decoder layers driven by learned query tokens, and the query grid
is upsampled by conv → pixel-shuffle stages to the texture resolution.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from texhand.diffcore import Params, Tensor, load_arrays, ops, save_arrays
from texhand.diffcore.nn import attention_layer, init_attention_layer, init_conv, init_layer_norm, init_linear
from texhand.diffcore.tensor import default_dtype
from texhand.sampler import SampleSet


@dataclass
class TexModelConfig:
    D: int = 6                 # colour embedding width
    D_pos: int = 58            # Fourier feature width (even)
    K: int = 8                 # decoder layers
    heads: int = 4
    grid: int = 4              # query grid side g; T = g²
    U: int = 4                 # upscale stages
    ffn: int = 128
    dec_channels: list = field(default_factory=lambda: [64, 32, 32, 16])
    self_attn: bool = True
    rff_sigma: float = 8.0
    query_init: str = "normal"       # "normal" or "positional" (γ of the grid-cell centre)
    norm: str = "post"               # LayerNorm placement in the attention layers: "post" or "pre"
    seed: int = 0

    @property
    def width(self) -> int:
        return self.D + self.D_pos

    @property
    def tokens(self) -> int:
        return self.grid * self.grid

    @property
    def tex_size(self) -> int:
        return self.grid * 2 ** self.U

    def validate(self) -> None:
        if self.D_pos % 2:
            raise ValueError(f"texnet.D_pos must be even, got {self.D_pos}")
        if self.width % self.heads:
            raise ValueError(f"texnet.heads={self.heads} must divide D + D_pos = {self.width}")
        if len(self.dec_channels) != self.U:
            raise ValueError(f"texnet.dec_channels needs {self.U} entries (one per upscale stage)")
        if min(self.D, self.D_pos, self.K, self.grid, self.heads) < 0 or self.grid < 1:
            raise ValueError("texnet dimensions must be non-negative")
        if self.norm not in ("pre", "post"):
            raise ValueError(f"texnet.norm must be 'pre' or 'post', got {self.norm!r}")
        if self.query_init not in ("positional", "normal"):
            raise ValueError(f"texnet.query_init must be 'positional' or 'normal', got {self.query_init!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TexModelConfig":
        return cls(**d)


def init_params(config: TexModelConfig, seed: int | None = None) -> Params:
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    dt = default_dtype()
    d = config.width
    p = Params()
    init_linear(p, "embed", 3, config.D, rng)
    p.add("rff.B", (rng.standard_normal((config.D_pos // 2, 2)) * config.rff_sigma).astype(dt), trainable=False)
    p.add("null", (0.02 * rng.standard_normal((1, d))).astype(dt))
    queries = rng.standard_normal((config.tokens, d))
    if config.query_init == "positional":
        # each query starts as the encoding of the texture cell it decodes to,
        # so queries and keys share one positional code from the first step
        g = config.grid
        rows, cols = np.divmod(np.arange(g * g), g)
        centre = np.stack([(cols + 0.5) / g, (rows + 0.5) / g], 1)
        proj = 2 * np.pi * centre @ p["rff.B"].data.astype(np.float64).T
        queries[:, :config.D] *= 0.02
        queries[:, config.D:] = np.concatenate([np.sin(proj), np.cos(proj)], 1)
    p.add("queries", queries.astype(dt))
    for i in range(config.K):
        init_attention_layer(p, f"layer{i}", d, config.ffn, rng, self_attn=config.self_attn)
    if config.norm == "pre":
        init_layer_norm(p, "final.ln", d)
    c_in = d
    for s, c_out in enumerate(config.dec_channels):
        init_conv(p, f"dec{s}", c_in, 4 * c_out, 3, rng)
        c_in = c_out
    init_conv(p, "out", c_in, 3, 3, rng)
    return p


def rff_encode(uv, params: Params) -> Tensor:
    """γ(u) = [sin(2π B u), cos(2π B u)] with the fixed frequency matrix B."""
    uv = uv if isinstance(uv, Tensor) else Tensor(uv)
    proj = ops.mul(ops.matmul(uv, ops.transpose(params["rff.B"])), 2 * np.pi)
    return ops.concat([ops.sin(proj), ops.cos(proj)], axis=1)


def _inputs(samples):
    if isinstance(samples, SampleSet):
        return Tensor(samples.uv), Tensor(samples.color)
    uv, color = samples
    return (uv if isinstance(uv, Tensor) else Tensor(uv)), (color if isinstance(color, Tensor) else Tensor(color))


def encode(samples, params: Params, config: TexModelConfig) -> dict:
    uv, color = _inputs(samples)
    e_img = ops.add(ops.matmul(color, params["embed.w"]), params["embed.b"])
    e_pos = rff_encode(uv, params)
    e = ops.concat([e_img, e_pos], axis=1)
    memory = ops.concat([e, params["null"]], axis=0)
    z = params["queries"]
    for i in range(config.K):
        z = attention_layer(z, memory, params, f"layer{i}", config.heads, config.norm)
    if config.norm == "pre":
        z = ops.layer_norm(z, params["final.ln.g"], params["final.ln.b"])
    return {"E_img": e_img, "E_pos": e_pos, "E": e, "memory": memory, "Z": z}


def decode(z: Tensor, params: Params, config: TexModelConfig) -> Tensor:
    g = config.grid
    feat = ops.reshape(ops.transpose(z), (config.width, g, g))
    for s in range(config.U):
        feat = ops.conv2d(feat, params[f"dec{s}.w"], params[f"dec{s}.b"])
        feat = ops.gelu(ops.pixel_shuffle(feat, 2))
    return ops.sigmoid(ops.conv2d(feat, params["out.w"], params["out.b"]))


def tex_forward(samples, params: Params, config: TexModelConfig, return_activations: bool = False):
    """Predict a 3×H_T×W_T texture in [0,1] from a sample set (L may be 0).

    ``samples`` is a :class:`SampleSet` or a ``(uv, color)`` pair of arrays or
    Tensors (pass Tensors to differentiate with respect to the observations).
    """
    acts = encode(samples, params, config)
    tex = decode(acts["Z"], params, config)
    return (tex, acts) if return_activations else tex


def param_count(params: Params) -> int:
    """Trainable scalar count (the Fourier frequency matrix is excluded)."""
    return params.count()


def analytic_param_count(config: TexModelConfig) -> int:
    d, f = config.width, config.ffn
    attn = 4 * (d * d + d) + 2 * d
    per_layer = (2 if config.self_attn else 1) * attn + (d * f + f) + (f * d + d) + 2 * d
    total = 3 * config.D + config.D + d + config.tokens * d + config.K * per_layer
    if config.norm == "pre":
        total += 2 * d
    c_in = d
    for c_out in config.dec_channels:
        total += c_in * 4 * c_out * 9 + 4 * c_out
        c_in = c_out
    return total + c_in * 3 * 9 + 3


def save_model(path, params: Params, config: TexModelConfig, extra: dict | None = None) -> None:
    meta = {"kind": "texnet", "config": config.to_dict(), "frozen": sorted(params.frozen)}
    meta.update(extra or {})
    save_arrays(path, params.arrays(), meta)


def load_model(path, config: TexModelConfig | None = None) -> tuple[Params, TexModelConfig]:
    """Load a checkpoint; when ``config`` is given every array shape is validated against it."""
    arrays, meta = load_arrays(path)
    stored = TexModelConfig.from_dict(meta["config"])
    cfg = config or stored
    reference = init_params(cfg)
    for name, ref in reference.items():
        if name not in arrays:
            raise ValueError(f"checkpoint {path} lacks parameter {name}")
        if arrays[name].shape != ref.shape:
            raise ValueError(f"checkpoint {path}: {name} has shape {arrays[name].shape}, "
                             f"config expects {ref.shape}")
    extra = set(arrays) - set(reference)
    if extra:
        raise ValueError(f"checkpoint {path} has unexpected parameters {sorted(extra)[:3]}")
    params = Params(frozen=meta.get("frozen", []))
    for name, arr in arrays.items():
        params[name] = Tensor(arr, requires_grad=name not in params.frozen, dtype=arr.dtype)
    return params, cfg
