"""Finite-difference gradient checks over every differentiable primitive and
the composite graphs built from them (attention, texture model, skinning,
rendering, weak loss)."""
from __future__ import annotations

from typing import Callable

import numpy as np

from texhand.diffcore import GradCheckReport, Params, Tensor, grad_check, ops, precision
from texhand.diffcore.nn import attention_layer, init_attention_layer

SEEDS = (0, 1, 2)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _uv_off_grid(rng, n, size, margin=0.1):
    """uv coordinates whose texel-space position keeps ``margin`` from integer grid lines."""
    cell = rng.integers(0, size - 1, (n, 2))
    frac = rng.uniform(margin, 1 - margin, (n, 2))
    return (cell + frac) / (size - 1)


def primitive_cases(rng: np.random.Generator) -> list[tuple[str, Callable, list, str]]:
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    img = rng.standard_normal((2, 4, 4))
    idx = rng.integers(0, 5, 7)
    tex = rng.random((3, 5, 5))
    uv = _uv_off_grid(rng, 6, 5)
    cases = [
        ("add (broadcast)", lambda x, y: ops.add(x, y), [a, b[0]], ""),
        ("sub", lambda x, y: ops.sub(x, y), [a, b], ""),
        ("mul (broadcast)", lambda x, y: ops.mul(x, y), [a, b[:, :1]], ""),
        ("div", lambda x, y: ops.div(x, y), [a, pos], ""),
        ("neg", lambda x: ops.neg(x), [a], ""),
        ("power", lambda x: ops.power(x, 3), [a], ""),
        ("matmul", lambda x, y: ops.matmul(x, y), [a, rng.standard_normal((4, 2))], ""),
        ("matmul (batched)", lambda x, y: ops.matmul(x, y),
         [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 2))], ""),
        ("exp", lambda x: ops.exp(x), [a], ""),
        ("log", lambda x: ops.log(x), [pos], ""),
        ("sqrt", lambda x: ops.sqrt(x), [pos], ""),
        ("sin", lambda x: ops.sin(x), [a], ""),
        ("cos", lambda x: ops.cos(x), [a], ""),
        ("tanh", lambda x: ops.tanh(x), [a], ""),
        ("sigmoid", lambda x: ops.sigmoid(x), [a], ""),
        ("relu", lambda x: ops.relu(x), [_away_from_zero(rng, (3, 4))], "inputs kept off the kink"),
        ("gelu", lambda x: ops.gelu(x), [a], ""),
        ("abs", lambda x: ops.absolute(x), [_away_from_zero(rng, (3, 4))], "inputs kept off the kink"),
        ("sum (axis)", lambda x: ops.sum_(x, axis=1), [a], ""),
        ("mean", lambda x: ops.mean(x, axis=0, keepdims=True), [a], ""),
        ("reshape", lambda x: ops.reshape(x, (2, 6)), [a], ""),
        ("transpose", lambda x: ops.transpose(x, (2, 0, 1)), [img], ""),
        ("getitem", lambda x: x[1:, ::2], [a], ""),
        ("take_rows (repeats)", lambda x: ops.take_rows(x, idx), [rng.standard_normal((5, 3))], ""),
        ("scatter_rows", lambda x: ops.scatter_rows(x, np.array([4, 0, 2]), 6), [rng.standard_normal((3, 2))], ""),
        ("concat", lambda x, y: ops.concat([x, y], axis=1), [a, b], ""),
        ("stack", lambda x, y: ops.stack([x, y], axis=0), [a, b], ""),
        ("softmax", lambda x: ops.softmax(x, axis=-1), [a], ""),
        ("layer_norm", lambda x, g, c: ops.layer_norm(x, g, c),
         [a, rng.standard_normal(4), rng.standard_normal(4)], ""),
        ("conv2d 3x3", lambda x, w, c: ops.conv2d(x, w, c),
         [img, rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)], ""),
        ("pixel_shuffle", lambda x: ops.pixel_shuffle(x, 2), [rng.standard_normal((8, 2, 3))], ""),
        ("pixel_unshuffle", lambda x: ops.pixel_unshuffle(x, 2), [img], ""),
        ("avg_pool2d", lambda x: ops.avg_pool2d(x, 2), [img], ""),
        ("bilinear_sample", lambda t, c: ops.bilinear_sample(t, c), [tex, uv],
         "uv kept away from texel boundaries where the derivative jumps"),
        ("dft2_magnitude", lambda x: ops.dft2_magnitude(x), [img], ""),
    ]
    return cases


def attention_case(rng: np.random.Generator, norm: str = "pre"):
    d, heads = 8, 2
    p = Params()
    init_attention_layer(p, "att", d, 12, rng, self_attn=True)
    names = list(p.keys())
    q = rng.standard_normal((3, d))
    mem = rng.standard_normal((5, d))

    def fn(qq, mm, *arrs):
        local = Params()
        for n, t in zip(names, arrs):
            local[n] = t
        return attention_layer(qq, mm, local, "att", heads, norm)

    return f"attention layer (self + cross + ffn, {norm}-norm)", fn, [q, mem] + [p[n].data for n in names], ""


def mini_texnet_case(seed: int):
    from texhand.texnet import TexModelConfig, init_params, tex_forward

    cfg = TexModelConfig(D=2, D_pos=4, K=1, heads=2, grid=2, U=1, ffn=8, dec_channels=[2], seed=seed)
    with precision("f64"):
        p = init_params(cfg)
    names = [n for n in p if n not in p.frozen]
    rng = np.random.default_rng(seed)
    uv = rng.random((5, 2))
    color = rng.random((5, 3))

    def fn(uu, cc, *arrs):
        local = Params(frozen=p.frozen)
        local["rff.B"] = p["rff.B"]
        for n, t in zip(names, arrs):
            local[n] = t
        return tex_forward((uu, cc), local, cfg)

    return "texnet end-to-end (g=2,U=1,K=1,D=2,D'=4)", fn, [uv, color] + [p[n].data for n in names], ""


def pose_case(rng: np.random.Generator):
    from texhand.geom import toy_hand
    from texhand.geom.rig import apply_pose

    mesh = toy_hand()
    vec = np.concatenate([rng.normal(0, 0.4, 3), rng.normal(0, 1, 3), rng.uniform(0.2, 1.2, 5)])
    return "apply_pose (skinning + global rigid)", lambda v: apply_pose(mesh, v), [vec], ""


def render_case(rng: np.random.Generator):
    from texhand.geom import Camera, PoseParams, toy_hand
    from texhand.geom.rig import apply_pose
    from texhand.render import photometric_loss, render_textured

    mesh = toy_hand()
    cam = Camera.looking_at_origin(45.0, 62.5, 32, 32)
    verts = apply_pose(mesh, PoseParams(translation=[0.0, -3.0, 0.0]))
    observed = rng.random((3, 32, 32))
    tex = rng.random((3, 6, 6))

    def fn(t):
        out = render_textured(verts, mesh.faces, mesh.face_uvs, t, cam, 32, 32)
        return photometric_loss(observed, out)

    return "render texture path + photometric loss", fn, [tex], ""


def weak_loss_case(rng: np.random.Generator):
    from texhand.lossmetrics import LossConfig, weak_loss
    from texhand.sampler import SupervisionTarget

    target = SupervisionTarget(rng.random((3, 8, 8)), (rng.random((8, 8)) > 0.4).astype(float))
    pred = rng.random((3, 8, 8))
    return "weak_loss (masked L1 + Fourier)", lambda t: weak_loss(t, target, LossConfig())[0], [pred], ""


def run_suite(seeds=SEEDS, tol: float = 1e-4, h: float = 1e-5, quick: bool = False) -> list[GradCheckReport]:
    reports = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        cases = primitive_cases(rng)
        cases.append(attention_case(rng, "pre"))
        cases.append(attention_case(rng, "post"))
        cases.append(mini_texnet_case(seed))
        if not quick:
            cases.append(pose_case(rng))
            cases.append(render_case(rng))
        cases.append(weak_loss_case(rng))
        for name, fn, inputs, note in cases:
            reports.append(grad_check(fn, inputs, h=h, tol=tol, seed=seed, name=f"{name} [seed {seed}]",
                                      note=note))
    return reports
