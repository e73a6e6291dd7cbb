"""Differentiable computation substrate: tensors, tape, primitives."""
from texhand.diffcore.tensor import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    current_tape,
    default_dtype,
    get_precision,
    no_grad,
    precision,
    set_check_finite,
    set_precision,
    zero_grads,
)
from texhand.diffcore.ops import (
    absolute,
    add,
    avg_pool2d,
    bilinear_sample,
    concat,
    conv2d,
    cos,
    dft2_magnitude,
    div,
    exp,
    gelu,
    getitem,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    neg,
    pixel_shuffle,
    pixel_unshuffle,
    power,
    relu,
    reshape,
    scatter_rows,
    sigmoid,
    sin,
    softmax,
    sqrt,
    stack,
    sub,
    sum_,
    take_rows,
    tanh,
    transpose,
)
from texhand.diffcore.nn import Params, attention_layer, multihead_attention
from texhand.diffcore.gradcheck import GradCheckReport, grad_check
from texhand.diffcore.checkpoint import CheckpointError, load_arrays, save_arrays

__all__ = [name for name in dir() if not name.startswith("_")]
