"""Shaped arrays with a recorded operation graph and reverse-mode gradients."""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}

_dtype = np.float32
_check_finite = False
_local = threading.local()


def default_dtype():
    return _dtype


def set_precision(mode: str) -> None:
    """Select the dtype for new tensors: ``"f32"`` (default) or ``"f64"``."""
    global _dtype
    try:
        _dtype = _DTYPES[mode]
    except KeyError:
        raise ValueError(f"unknown precision {mode!r}; expected one of {sorted(_DTYPES)}") from None


def get_precision() -> str:
    return "f64" if _dtype is np.float64 else "f32"


@contextlib.contextmanager
def precision(mode: str):
    prev = get_precision()
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(prev)


def set_check_finite(flag: bool) -> None:
    """Test mode: raise ``FloatingPointError`` when a primitive produces NaN/Inf."""
    global _check_finite
    _check_finite = bool(flag)


def check_finite_enabled() -> bool:
    return _check_finite


class _Record:
    __slots__ = ("op", "inputs", "out", "backward", "index", "tape")

    def __init__(self, op, inputs, out, backward, index, tape):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward = backward
        self.index = index
        self.tape = tape


class Tape:
    """Ordered record of primitive applications.

    Records are appended in creation order, which is already a topological
    order of the graph; :func:`backward` walks them in reverse.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __len__(self):
        return len(self.records)

    def record(self, op: str, inputs: tuple, out: "Tensor", backward: Callable) -> None:
        rec = _Record(op, inputs, out, backward, len(self.records), self)
        out._rec = rec
        self.records.append(rec)

    def clear(self) -> None:
        for rec in self.records:
            if rec.out is not None:
                rec.out._rec = None
            rec.out = None
            rec.inputs = ()
            rec.backward = None
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = [Tape()]
    return stack


def current_tape() -> Tape:
    return _tape_stack()[-1]


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_rec", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._rec = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._rec is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, retain_graph: bool = False) -> None:
        backward(self, retain_graph=retain_graph)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap a primitive's output and, when needed, record it on the active tape.

    ``backward_fn`` maps the output gradient to a tuple with one entry per
    input (``None`` for inputs without a gradient path).
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._rec = None
    out.requires_grad = False
    if _check_finite and data.dtype.kind == "f" and not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values produced by {op}")
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        current_tape().record(op, tuple(inputs), out, backward_fn)
    return out


def backward(root: Tensor, retain_graph: bool = False) -> None:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``root``.

    Leaf gradients are assigned (not accumulated) and contributions from all
    paths are summed.  The tape that holds ``root`` is cleared afterwards
    unless ``retain_graph`` is set.
    """
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    rec = root._rec
    if rec is None or not root.requires_grad:
        raise ValueError("root is detached from the tape (no recorded operation produced it)")
    tape = rec.tape
    grads = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Tensor] = {}
    for r in reversed(tape.records[: rec.index + 1]):
        g = grads.pop(id(r.out), None)
        if g is None:
            continue
        in_grads = r.backward(g)
        for t, gi in zip(r.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            k = id(t)
            prev = grads.get(k)
            grads[k] = gi if prev is None else prev + gi
            if t._rec is None:
                leaves[k] = t
    for k, t in leaves.items():
        t.grad = np.array(grads[k], dtype=t.data.dtype).reshape(t.shape)
    if not retain_graph:
        tape.clear()


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
