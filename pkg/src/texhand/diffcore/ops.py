"""Differentiable primitives over :class:`Tensor`."""
from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from texhand.diffcore.tensor import Tensor, as_tensor, check_finite_enabled, make_result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_result(a.data @ b.data, (a, b), bw, "matmul")


# -- elementwise unary -------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1 + np.tanh(0.5 * a.data))
    return make_result(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.maximum(a.data, 0), (a,), lambda g: (g * (a.data > 0),), "relu")


_GELU_C = float(np.sqrt(2 / np.pi))


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1 + t)

    def bw(g):
        dinner = _GELU_C * (1 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner),)

    return make_result(out, (a,), bw, "gelu")


def absolute(a) -> Tensor:
    """``|a|`` with subgradient 0 at 0."""
    a = as_tensor(a)
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


# -- reductions and shape ops ------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return make_result(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(sum_(a, axes, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def _has_advanced(idx) -> bool:
    if not isinstance(idx, tuple):
        idx = (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in idx)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.intp)
    advanced = _has_advanced(idx)

    def bw(g):
        z = np.zeros(a.shape, dtype=g.dtype)
        if advanced:
            np.add.at(z, idx, g)
        else:
            z[idx] = g
        return (z,)

    return make_result(np.asarray(a.data[idx]), (a,), bw, "getitem")


def take_rows(a, index: np.ndarray) -> Tensor:
    """Gather rows ``a[index]`` along axis 0; repeated indices accumulate in backward."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        flat = g.reshape(index.size, -1)
        z = np.zeros((a.shape[0], flat.shape[1]), dtype=g.dtype)
        np.add.at(z, index.reshape(-1), flat)
        return (z.reshape(a.shape),)

    return make_result(a.data[index], (a,), bw, "take_rows")


def scatter_rows(values, index: np.ndarray, n_rows: int) -> Tensor:
    """Place the rows of ``values`` at distinct positions ``index`` of an
    ``n_rows``-row zero array."""
    values = as_tensor(values)
    index = np.asarray(index, dtype=np.intp)
    out = np.zeros((n_rows,) + values.shape[1:], dtype=values.dtype)
    out[index] = values.data
    return make_result(out, (values,), lambda g: (g[index],), "scatter_rows")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return make_result(
        np.concatenate([t.data for t in ts], axis=axis), ts,
        lambda g: tuple(np.split(g, splits, axis=axis)), "concat",
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make_result(np.stack([t.data for t in ts], axis=axis), ts, bw, "stack")


# -- fused normalisation and attention helpers -------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), bw, "softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    n = x.shape[-1]

    def bw(g):
        dxhat = g * gamma.data
        dx = rstd / n * (
            n * dxhat - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


# -- image ops ---------------------------------------------------------------

def conv2d(x, weight, bias=None) -> Tensor:
    """Stride-1 'same' convolution.

    ``x`` is C×H×W or N×C×H×W; ``weight`` is O×C×k×k with odd k.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, c, h, w = xd.shape
    o, ci, k, k2 = weight.shape
    if ci != c or k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}")
    p = k // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)
    wmat = weight.data.reshape(o, c * k * k)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(n, h, w, o).transpose(0, 3, 1, 2)
    if squeeze:
        out = out[0]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g4 = g[None] if squeeze else g
        gcol = g4.transpose(0, 2, 3, 1).reshape(n * h * w, o)
        gw = (gcol.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gcol @ wmat).reshape(n, h, w, c, k, k)
            gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
            if squeeze:
                gx = gx[0]
        res = (gx, gw)
        if bias is not None:
            res = res + (gcol.sum(axis=0),)
        return res

    return make_result(np.ascontiguousarray(out), inputs, bw, "conv2d")


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    *lead, crr, h, w = a.shape
    c = crr // (r * r)
    y = a.reshape(*lead, c, r, r, h, w)
    nl = len(lead)
    perm = tuple(range(nl)) + tuple(nl + i for i in (0, 3, 1, 4, 2))
    return y.transpose(perm).reshape(*lead, c, h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    *lead, c, hr, wr = a.shape
    h, w = hr // r, wr // r
    y = a.reshape(*lead, c, h, r, w, r)
    nl = len(lead)
    perm = tuple(range(nl)) + tuple(nl + i for i in (0, 2, 4, 1, 3))
    return y.transpose(perm).reshape(*lead, c * r * r, h, w)


def pixel_shuffle(x, r: int) -> Tensor:
    """(C·r²)×h×w → C×(h·r)×(w·r); ``out[c, i*r+a, j*r+b] = in[c*r*r + a*r + b, i, j]``."""
    x = as_tensor(x)
    if x.ndim < 3 or x.shape[-3] % (r * r):
        raise ValueError(f"channel count {x.shape[-3] if x.ndim >= 3 else None} not divisible by r²={r * r}")
    return make_result(
        np.ascontiguousarray(_shuffle(x.data, r)), (x,),
        lambda g: (_unshuffle(g, r),), "pixel_shuffle",
    )


def pixel_unshuffle(x, r: int) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] % r or x.shape[-2] % r:
        raise ValueError(f"spatial extents {x.shape[-2:]} not divisible by {r}")
    return make_result(
        np.ascontiguousarray(_unshuffle(x.data, r)), (x,),
        lambda g: (_shuffle(g, r),), "pixel_unshuffle",
    )


def avg_pool2d(x, k: int) -> Tensor:
    x = as_tensor(x)
    *lead, h, w = x.shape
    y = reshape(x, (*lead, h // k, k, w // k, k))
    return mean(y, axis=(-3, -1))


def bilinear_sample(texture, coords) -> Tensor:
    """Sample a C×H×W texture at N (u, v) points in [0,1]², returning N×C.

    ``u`` runs along columns and ``v`` along rows; (0, 0) and (1, 1) are the
    centres of the first and last texels.
    """
    texture, coords = as_tensor(texture), as_tensor(coords)
    c, h, w = texture.shape
    if h < 2 or w < 2:
        raise ValueError("bilinear_sample needs texture extents >= 2")
    uv = coords.data
    inside = (uv >= 0) & (uv <= 1)
    if not inside.all():
        if check_finite_enabled():
            warnings.warn(f"bilinear_sample: {int((~inside).any(axis=1).sum())} coords outside [0,1]² clamped",
                          RuntimeWarning, stacklevel=2)
        uv = np.clip(uv, 0.0, 1.0)
    x = uv[:, 0] * (w - 1)
    y = uv[:, 1] * (h - 1)
    x0 = np.clip(np.floor(x).astype(np.intp), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(np.intp), 0, h - 2)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    flat = texture.data.reshape(c, h * w)
    i00 = y0 * w + x0
    i01 = i00 + 1
    i10 = i00 + w
    i11 = i10 + 1
    t00, t01, t10, t11 = (flat[:, i].T for i in (i00, i01, i10, i11))
    top = t00 + fx * (t01 - t00)
    bot = t10 + fx * (t11 - t10)
    out = top + fy * (bot - top)

    def bw(g):
        gt = gc = None
        if texture.requires_grad:
            acc = np.zeros((h * w, c), dtype=g.dtype)
            np.add.at(acc, i00, g * ((1 - fx) * (1 - fy)))
            np.add.at(acc, i01, g * (fx * (1 - fy)))
            np.add.at(acc, i10, g * ((1 - fx) * fy))
            np.add.at(acc, i11, g * (fx * fy))
            gt = acc.T.reshape(c, h, w)
        if coords.requires_grad:
            dfx = (1 - fy) * (t01 - t00) + fy * (t11 - t10)
            dfy = bot - top
            gc = np.stack([(g * dfx).sum(axis=1) * (w - 1), (g * dfy).sum(axis=1) * (h - 1)], axis=1)
            gc = gc * inside
        return gt, gc

    return make_result(out.astype(texture.dtype, copy=False), (texture, coords), bw, "bilinear_sample")


def dft2_magnitude(image) -> Tensor:
    """Per-channel magnitude of the 2-D DFT of a C×H×W image.

    The derivative at a zero-magnitude bin is taken to be 0.
    """
    image = as_tensor(image)
    h, w = image.shape[-2:]
    spec = np.fft.fft2(image.data, axes=(-2, -1))
    mag = np.abs(spec)

    def bw(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            phase = np.where(mag > 0, spec / np.where(mag > 0, mag, 1), 0)
        gx = np.real(np.fft.ifft2(g * phase, axes=(-2, -1))) * (h * w)
        return (gx.astype(image.dtype, copy=False),)

    return make_result(mag.astype(image.dtype, copy=False), (image,), bw, "dft2_magnitude")


# -- operator overloads ------------------------------------------------------

def _install():
    T = Tensor
    T.__add__ = lambda a, b: add(a, b)
    T.__radd__ = lambda a, b: add(b, a)
    T.__sub__ = lambda a, b: sub(a, b)
    T.__rsub__ = lambda a, b: sub(b, a)
    T.__mul__ = lambda a, b: mul(a, b)
    T.__rmul__ = lambda a, b: mul(b, a)
    T.__truediv__ = lambda a, b: div(a, b)
    T.__rtruediv__ = lambda a, b: div(b, a)
    T.__neg__ = lambda a: neg(a)
    T.__pow__ = lambda a, p: power(a, p)
    T.__matmul__ = lambda a, b: matmul(a, b)
    T.__getitem__ = lambda a, idx: getitem(a, idx)
    T.sum = lambda a, axis=None, keepdims=False: sum_(a, axis, keepdims)
    T.mean = lambda a, axis=None, keepdims=False: mean(a, axis, keepdims)
    T.reshape = lambda a, *shape: reshape(a, shape[0] if len(shape) == 1 else shape)
    T.transpose = lambda a, *axes: transpose(a, axes[0] if len(axes) == 1 else (axes or None))
    T.exp = exp
    T.log = log
    T.sqrt = sqrt
    T.abs = absolute
    T.T = property(lambda a: transpose(a))


_install()
