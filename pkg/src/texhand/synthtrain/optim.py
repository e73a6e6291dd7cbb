"""Adam-style moment-based optimizer over named Tensors."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from texhand.diffcore import Tensor


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        if self.lr == 0:
            return
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if not m.any():
                continue
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)

    def state(self) -> dict:
        out = {"adam.t": np.array([self.t])}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out
