"""Central-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from texhand.diffcore.tensor import Tensor, backward, no_grad, precision


@dataclass
class InputReport:
    index: int
    max_rel_err: float
    max_abs_err: float
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


@dataclass
class GradCheckReport:
    name: str
    inputs: list[InputReport]
    tol: float
    note: str = ""

    @property
    def max_rel_err(self) -> float:
        return max((r.max_rel_err for r in self.inputs), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.note})" if self.note else ""
        return f"{status} {self.name:<36s} max rel err {self.max_rel_err:.2e}{extra}"


def _scalarize(out: Tensor, weights: np.ndarray | None) -> Tensor:
    if weights is None:
        return out
    return (out * Tensor(weights)).sum()


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
               tol: float = 1e-4, seed: int = 0, name: str = "", wrt: Sequence[int] | None = None,
               note: str = "", floor: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    ``fn`` receives one Tensor per entry of ``inputs``.  Non-scalar outputs are
    contracted with fixed random weights.  The error for an input is the
    max-norm relative error ``|g_rev - g_fd|_inf / max(|g_rev|_inf, |g_fd|_inf, floor)``;
    the floor keeps inputs whose true gradient is exactly zero (for example a
    key bias under softmax shift invariance) from dividing noise by noise.
    Runs in 64-bit.
    """
    with precision("f64"):
        arrays = [np.array(x, dtype=np.float64) for x in inputs]
        wrt = list(range(len(arrays))) if wrt is None else list(wrt)
        rng = np.random.default_rng(seed)

        with no_grad():
            probe = fn(*[Tensor(a) for a in arrays])
        weights = None if probe.size == 1 else rng.standard_normal(probe.shape)

        tensors = [Tensor(a, requires_grad=i in wrt) for i, a in enumerate(arrays)]
        loss = _scalarize(fn(*tensors), weights)
        backward(loss)
        analytic = [tensors[i].grad if tensors[i].grad is not None else np.zeros_like(arrays[i]) for i in wrt]

        def evaluate(args):
            with no_grad():
                return float(_scalarize(fn(*[Tensor(a) for a in args]), weights).data)

        reports = []
        for slot, i in enumerate(wrt):
            num = np.zeros_like(arrays[i])
            flat = num.reshape(-1)
            base = arrays[i].reshape(-1)
            for j in range(base.size):
                orig = base[j]
                base[j] = orig + h
                fp = evaluate(arrays)
                base[j] = orig - h
                fm = evaluate(arrays)
                base[j] = orig
                flat[j] = (fp - fm) / (2 * h)
            an = analytic[slot]
            diff = np.abs(an - num).max() if num.size else 0.0
            scale = max(np.abs(an).max(initial=0.0), np.abs(num).max(initial=0.0))
            rel = diff / max(scale, floor)
            reports.append(InputReport(i, float(rel), float(diff), an, num))
    return GradCheckReport(name or getattr(fn, "__name__", "fn"), reports, tol, note)
