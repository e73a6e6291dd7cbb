"""Parameter containers and composite layers built from the primitives."""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from typing import Iterable

import numpy as np

from texhand.diffcore import ops
from texhand.diffcore.tensor import Tensor, default_dtype


class Params(OrderedDict):
    """Ordered mapping of parameter name to :class:`Tensor`.

    Names listed in ``frozen`` are constants: they never require gradients
    and are excluded from trainable counts.
    """

    def __init__(self, *args, frozen: Iterable[str] = (), **kwargs):
        super().__init__(*args, **kwargs)
        self.frozen = set(frozen)

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        t = Tensor(value, requires_grad=trainable)
        if not trainable:
            self.frozen.add(name)
        self[name] = t
        return t

    def trainable(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, v) for k, v in self.items() if k not in self.frozen)

    def group(self, prefix: str) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, v) for k, v in self.items() if k.startswith(prefix))

    def count(self) -> int:
        return int(sum(v.size for v in self.trainable().values()))

    def set_trainable(self, flag: bool) -> None:
        for k, v in self.items():
            v.requires_grad = flag and k not in self.frozen
            v.grad = None

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data) for k, v in self.items())

    def copy(self) -> "Params":
        out = Params(frozen=self.frozen)
        for k, v in self.items():
            out[k] = Tensor(v.data.copy(), requires_grad=v.requires_grad, dtype=v.data.dtype)
        return out

    def astype(self, dtype) -> "Params":
        out = Params(frozen=self.frozen)
        for k, v in self.items():
            out[k] = Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, dtype=dtype)
        return out

    def checksum(self, names: Iterable[str] | None = None) -> str:
        h = hashlib.sha256()
        for k in names if names is not None else self.keys():
            h.update(k.encode())
            h.update(np.ascontiguousarray(self[k].data).tobytes())
        return h.hexdigest()


def init_linear(params: Params, name: str, fan_in: int, fan_out: int, rng: np.random.Generator,
                bias: bool = True) -> None:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    params.add(name + ".w", rng.uniform(-bound, bound, (fan_in, fan_out)).astype(default_dtype()))
    if bias:
        params.add(name + ".b", np.zeros(fan_out, dtype=default_dtype()))


def init_conv(params: Params, name: str, c_in: int, c_out: int, k: int, rng: np.random.Generator) -> None:
    fan_in = c_in * k * k
    bound = np.sqrt(6.0 / fan_in)
    params.add(name + ".w", rng.uniform(-bound, bound, (c_out, c_in, k, k)).astype(default_dtype()))
    params.add(name + ".b", np.zeros(c_out, dtype=default_dtype()))


def init_layer_norm(params: Params, name: str, d: int) -> None:
    params.add(name + ".g", np.ones(d, dtype=default_dtype()))
    params.add(name + ".b", np.zeros(d, dtype=default_dtype()))


def init_attention_layer(params: Params, name: str, d: int, ffn: int, rng: np.random.Generator,
                         self_attn: bool = True) -> None:
    blocks = (["self", "cross"] if self_attn else ["cross"])
    for blk in blocks:
        for proj in ("q", "k", "v", "o"):
            init_linear(params, f"{name}.{blk}.{proj}", d, d, rng)
        init_layer_norm(params, f"{name}.{blk}.ln", d)
    init_linear(params, f"{name}.ffn1", d, ffn, rng)
    init_linear(params, f"{name}.ffn2", ffn, d, rng)
    init_layer_norm(params, f"{name}.ffn.ln", d)


def linear(x, p, name: str) -> Tensor:
    y = ops.matmul(x, p[name + ".w"])
    b = p.get(name + ".b")
    return y if b is None else ops.add(y, b)


def multihead_attention(x, mem, p, name: str, heads: int) -> Tensor:
    """Scaled dot-product attention of ``x`` (T×d) over ``mem`` (L×d)."""
    t, d = x.shape
    n = mem.shape[0]
    hd = d // heads
    q = ops.transpose(ops.reshape(linear(x, p, name + ".q"), (t, heads, hd)), (1, 0, 2))
    k = ops.transpose(ops.reshape(linear(mem, p, name + ".k"), (n, heads, hd)), (1, 2, 0))
    v = ops.transpose(ops.reshape(linear(mem, p, name + ".v"), (n, heads, hd)), (1, 0, 2))
    w = ops.softmax(ops.mul(ops.matmul(q, k), 1.0 / float(np.sqrt(hd))), axis=-1)
    o = ops.reshape(ops.transpose(ops.matmul(w, v), (1, 0, 2)), (t, d))
    return linear(o, p, name + ".o")


def attention_layer(queries, memory, p, name: str, heads: int, norm: str = "pre") -> Tensor:
    """One decoder layer: optional self-attention, cross-attention over
    ``memory``, then a feed-forward block, each residual.  ``norm="pre"``
    normalises each sublayer's input (x + f(LN(x))); ``norm="post"``
    normalises after the residual sum (LN(x + f(x))).  Rows of ``memory``
    are treated as an unordered set.
    """
    d = queries.shape[-1]
    if d % heads:
        raise ValueError(f"width {d} not divisible by {heads} heads")
    if memory.shape[0] == 0:
        raise ValueError("attention over an empty key/value set; append a null token first")
    if norm not in ("pre", "post"):
        raise ValueError(f"norm must be 'pre' or 'post', got {norm!r}")
    step = _pre_norm if norm == "pre" else _post_norm_step
    x = queries
    if name + ".self.q.w" in p:
        x = step(x, lambda y: multihead_attention(y, y, p, name + ".self", heads), p, name + ".self.ln")
    x = step(x, lambda y: multihead_attention(y, memory, p, name + ".cross", heads), p, name + ".cross.ln")
    return step(x, lambda y: linear(ops.gelu(linear(y, p, name + ".ffn1")), p, name + ".ffn2"), p, name + ".ffn.ln")


def _pre_norm(x, f, p, ln: str) -> Tensor:
    return ops.add(x, f(ops.layer_norm(x, p[ln + ".g"], p[ln + ".b"])))


def _post_norm_step(x, f, p, ln: str) -> Tensor:
    return _post_norm(x, f(x), p, ln)


def _post_norm(x, h, p, ln: str) -> Tensor:
    return ops.layer_norm(ops.add(x, h), p[ln + ".g"], p[ln + ".b"])
