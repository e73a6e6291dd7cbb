import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from texhand.diffcore import (
    CheckpointError, Params, Tape, Tensor, attention_layer, backward, grad_check, load_arrays, no_grad,
    ops, precision, save_arrays,
)
from texhand.diffcore.gradcheck import GradCheckReport
from texhand.diffcore.nn import init_attention_layer, linear
from texhand.diffcore.tensor import current_tape, get_precision, make_result

from oracles import naive_dft2


# -- backward ------------------------------------------------------------------

def test_sum_of_squares_gradient():
    with precision("f64"):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(ops.sum_(ops.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_identity_matmul_gradient_all_ones():
    with precision("f64"):
        x = Tensor(np.arange(4.0).reshape(4, 1), requires_grad=True)
        backward(ops.sum_(ops.matmul(Tensor(np.eye(4)), x)))
    np.testing.assert_array_equal(x.grad, np.ones((4, 1)))


def test_composite_graph_matches_finite_differences():
    def f(x, y):
        a = ops.mul(ops.sin(x), y)
        b = ops.exp(ops.mul(a, 0.3))
        c = ops.matmul(b, ops.transpose(y))
        return ops.sum_(ops.tanh(ops.add(c, 1.0)))

    rng = np.random.default_rng(0)
    rep = grad_check(f, [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))], name="composite")
    assert rep.passed, rep.line()


def test_multiple_paths_accumulate():
    with precision("f64"):
        x = Tensor(3.0, requires_grad=True)
        y = ops.add(ops.mul(x, x), ops.mul(x, 2.0))
        backward(y)
    assert x.grad == pytest.approx(8.0)


def test_backward_is_additive(rng):
    a = rng.standard_normal((3, 3))
    with precision("f64"):
        def grads(fn):
            x = Tensor(a, requires_grad=True)
            backward(fn(x))
            return x.grad
        f = lambda x: ops.sum_(ops.sin(x))
        g = lambda x: ops.sum_(ops.power(x, 3))
        both = grads(lambda x: ops.add(f(x), g(x)))
        np.testing.assert_allclose(both, grads(f) + grads(g), atol=1e-12, rtol=0)


def test_non_scalar_root_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(ops.mul(x, 2.0))


def test_detached_root_rejected():
    with pytest.raises(ValueError, match="detached"):
        backward(Tensor(1.0))


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    tape = current_tape()
    tape.clear()
    with no_grad():
        y = ops.mul(x, 2.0)
    assert len(tape) == 0
    assert not y.requires_grad


def test_tape_cleared_after_backward():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(ops.sum_(ops.mul(x, x)))
    assert len(current_tape()) == 0


def test_own_tape_context():
    with Tape() as tape:
        x = Tensor([1.0], requires_grad=True)
        ops.sum_(ops.exp(x))
        assert len(tape) == 2
    assert len(tape) == 2


def test_precision_switch():
    assert get_precision() == "f32"
    assert Tensor([1.0]).dtype == np.float32
    with precision("f64"):
        assert Tensor([1.0]).dtype == np.float64
    with pytest.raises(ValueError):
        with precision("f16"):
            pass


def test_check_finite_mode_flags_nan():
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        ops.log(Tensor([-1.0]))


# -- gradient checker -----------------------------------------------------------

def test_linear_layer_grad_check_seed0():
    rng = np.random.default_rng(0)

    def f(x, w, b):
        p = Params()
        p["l.w"], p["l.b"] = w, b
        return linear(x, p, "l")

    rep = grad_check(f, [rng.standard_normal((3, 3)), rng.standard_normal((3, 3)), rng.standard_normal(3)])
    assert rep.passed and rep.max_rel_err < 1e-4


def test_grad_check_detects_doubled_gradient():
    def doubled(x):
        def bw(g):
            return (2 * 2 * x.data * g,)
        return make_result(x.data ** 2, (x,), bw, "bad_square")

    rep = grad_check(lambda x: ops.sum_(doubled(x)), [np.array([0.5, -1.0, 2.0])])
    assert not rep.passed
    assert rep.max_rel_err == pytest.approx(0.5, rel=1e-6)
    assert rep.line().startswith("FAIL")


def test_bilinear_grad_check_interior():
    rng = np.random.default_rng(3)
    uv = (np.array([[0.3, 0.6], [1.4, 2.2], [2.7, 0.2]]) / 3.0)
    rep = grad_check(ops.bilinear_sample, [rng.random((2, 4, 4)), uv])
    assert rep.passed, rep.line()


# -- primitives ---------------------------------------------------------------

def test_bilinear_examples():
    with precision("f64"):
        tex = Tensor(np.array([[[0.0, 1.0], [2.0, 3.0]]]))
        out = ops.bilinear_sample(tex, Tensor([[0.5, 0.5], [0.0, 0.0], [1.0, 0.0], [0.25, 0.75]])).data[:, 0]
    # (0.25, 0.75): u along columns, v along rows
    # top = 0 + 0.25·(1−0) = 0.25; bottom = 2 + 0.25·(3−2) = 2.25; 0.25 + 0.75·2.0 = 1.75
    np.testing.assert_allclose(out, [1.5, 0.0, 1.0, 1.75], atol=0, rtol=0)


def test_bilinear_clamps_and_flags_out_of_range():
    tex = Tensor(np.zeros((1, 2, 2)))
    with pytest.warns(RuntimeWarning, match="clamped"):
        ops.bilinear_sample(tex, Tensor([[1.5, -0.2]]))


def test_pixel_shuffle_examples():
    x = Tensor(np.arange(4.0).reshape(4, 1, 1))
    y = ops.pixel_shuffle(x, 2)
    assert y.shape == (1, 2, 2)
    assert sorted(y.data.ravel()) == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        ops.pixel_shuffle(Tensor(np.zeros((3, 2, 2))), 2)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (8, 2, 2), elements=st.floats(-10, 10)))
def test_pixel_shuffle_roundtrip_and_multiset(x):
    with precision("f64"):
        y = ops.pixel_shuffle(Tensor(x), 2)
        back = ops.pixel_unshuffle(y, 2)
    np.testing.assert_array_equal(np.sort(y.data.ravel()), np.sort(x.ravel()))
    np.testing.assert_array_equal(back.data, x)


def test_dft_constant_image():
    with precision("f64"):
        mag = ops.dft2_magnitude(Tensor(np.full((1, 4, 4), 0.7))).data[0]
    assert mag[0, 0] == pytest.approx(0.7 * 16, abs=1e-12)
    mag[0, 0] = 0
    assert np.abs(mag).max() < 1e-12


def test_dft_matches_naive_summation():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 4, 4))
    with precision("f64"):
        mag = ops.dft2_magnitude(Tensor(x)).data
    for c in range(2):
        assert np.abs(mag[c] - np.abs(naive_dft2(x[c]))).max() < 1e-9


def test_dft_single_cosine_two_bins():
    n = 8
    x = np.cos(2 * np.pi * 2 * np.arange(n) / n)[None, :].repeat(n, 0)[None]
    with precision("f64"):
        mag = ops.dft2_magnitude(Tensor(x)).data[0]
    nz = np.argwhere(mag > 1e-9)
    assert sorted(map(tuple, nz)) == [(0, 2), (0, 6)]
    np.testing.assert_allclose(np.abs(naive_dft2(x[0])), mag, atol=1e-9)


def test_dft_parseval():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((3, 8, 6))
    with precision("f64"):
        mag = ops.dft2_magnitude(Tensor(x)).data
    assert np.sum(mag ** 2) == pytest.approx(8 * 6 * np.sum(x ** 2), rel=1e-6)


def test_dft_zero_magnitude_gradient_is_zero():
    with precision("f64"):
        x = Tensor(np.zeros((1, 4, 4)), requires_grad=True)
        backward(ops.sum_(ops.dft2_magnitude(x)))
    assert np.all(np.isfinite(x.grad))
    np.testing.assert_array_equal(x.grad, 0.0)


def test_conv2d_same_padding_matches_direct():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    with precision("f64"):
        y = ops.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    pad = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 5, 5))
    for o in range(3):
        for i in range(5):
            for j in range(5):
                ref[o, i, j] = np.sum(pad[:, i:i + 3, j:j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_softmax_rows_sum_to_one(rng):
    y = ops.softmax(Tensor(rng.standard_normal((4, 7)) * 30)).data
    np.testing.assert_allclose(y.sum(axis=1), 1.0, rtol=1e-6)


def test_gelu_tanh_form():
    x = np.linspace(-3, 3, 7)
    with precision("f64"):
        y = ops.gelu(Tensor(x)).data
    ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))
    np.testing.assert_allclose(y, ref, atol=1e-15)


def test_float32_stays_float32(rng):
    x = Tensor(rng.standard_normal((2, 4, 4)))
    for y in (ops.gelu(x), ops.dft2_magnitude(x), ops.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))):
        assert y.dtype == np.float32


# -- attention ----------------------------------------------------------------

def _attention_params(d=8, seed=0, self_attn=False):
    p = Params()
    with precision("f64"):
        init_attention_layer(p, "a", d, 16, np.random.default_rng(seed), self_attn=self_attn)
    return p


def _cross_block_ref(q, att_fn, P, norm):
    """Reference layer (no self-attention) from plain numpy pieces."""
    ln = lambda x, n: _ln(x, P[f"a.{n}.ln.g"], P[f"a.{n}.ln.b"])
    ffn = lambda x: _gelu(x @ P["a.ffn1.w"] + P["a.ffn1.b"]) @ P["a.ffn2.w"] + P["a.ffn2.b"]
    if norm == "post":
        x = ln(q + att_fn(q), "cross")
        return ln(x + ffn(x), "ffn")
    x = q + att_fn(ln(q, "cross"))
    return x + ffn(ln(x, "ffn"))


def _randomise_norms(p, rng):
    for name in list(p.keys()):
        if ".ln." in name:
            p[name] = Tensor(rng.normal(1.0 if name.endswith(".g") else 0.0, 0.3, p[name].shape), dtype=np.float64)


@pytest.mark.parametrize("norm", ["pre", "post"])
def test_attention_single_key_weight_is_one(rng, norm):
    p = _attention_params()
    _randomise_norms(p, rng)
    P = {k: v.data for k, v in p.items()}
    with precision("f64"):
        q = Tensor(rng.standard_normal((3, 8)))
        mem = Tensor(rng.standard_normal((1, 8)))
        out = attention_layer(q, mem, p, "a", heads=2, norm=norm).data
    # with one key the cross-attention output is o(v(mem)) whatever the query
    v = mem.data @ P["a.cross.v.w"] + P["a.cross.v.b"]
    att = v @ P["a.cross.o.w"] + P["a.cross.o.b"]
    ref = _cross_block_ref(q.data, lambda x: np.broadcast_to(att, x.shape), P, norm)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _gelu(x):
    return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))


@pytest.mark.parametrize("norm", ["pre", "post"])
def test_attention_matches_hand_rolled(norm):
    rng = np.random.default_rng(11)
    p = _attention_params(d=4, seed=11)
    _randomise_norms(p, rng)
    q = rng.standard_normal((2, 4))
    kv = rng.standard_normal((3, 4))
    heads = 2
    with precision("f64"):
        out = attention_layer(Tensor(q), Tensor(kv), p, "a", heads, norm=norm).data
    P = {k: v.data for k, v in p.items()}

    def att(x):
        Q = x @ P["a.cross.q.w"] + P["a.cross.q.b"]
        K = kv @ P["a.cross.k.w"] + P["a.cross.k.b"]
        V = kv @ P["a.cross.v.w"] + P["a.cross.v.b"]
        heads_out = []
        for hh in range(heads):
            sl = slice(2 * hh, 2 * hh + 2)
            s = Q[:, sl] @ K[:, sl].T / np.sqrt(2)
            wgt = np.exp(s - s.max(1, keepdims=True))
            wgt /= wgt.sum(1, keepdims=True)
            heads_out.append(wgt @ V[:, sl])
        return np.concatenate(heads_out, 1) @ P["a.cross.o.w"] + P["a.cross.o.b"]

    np.testing.assert_allclose(out, _cross_block_ref(q, att, P, norm), atol=1e-12)


def test_attention_permutation_invariant(rng):
    p = _attention_params(self_attn=True)
    q = rng.standard_normal((4, 8))
    kv = rng.standard_normal((8, 8))
    with precision("f64"):
        base = attention_layer(Tensor(q), Tensor(kv), p, "a", 4).data
        for _ in range(5):
            perm = rng.permutation(8)
            out = attention_layer(Tensor(q), Tensor(kv[perm]), p, "a", 4).data
            assert np.abs(out - base).max() < 1e-6


def test_attention_errors(rng):
    p = _attention_params()
    with pytest.raises(ValueError, match="empty"):
        attention_layer(Tensor(rng.standard_normal((2, 8))), Tensor(np.zeros((0, 8))), p, "a", 2)
    with pytest.raises(ValueError, match="divisible"):
        attention_layer(Tensor(rng.standard_normal((2, 8))), Tensor(rng.standard_normal((2, 8))), p, "a", 3)
    with pytest.raises(ValueError, match="norm"):
        attention_layer(Tensor(rng.standard_normal((2, 8))), Tensor(rng.standard_normal((2, 8))), p, "a", 2, "mid")


# -- checkpoint container ---------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    arrays = {"a": rng.standard_normal((3, 4)).astype(np.float32), "b": rng.standard_normal(5),
              "c": np.arange(6, dtype=np.int64).reshape(2, 3), "s": np.array(2.5)}
    save_arrays(tmp_path / "x.ckpt", arrays, {"note": "hi"})
    back, meta = load_arrays(tmp_path / "x.ckpt")
    assert meta["note"] == "hi"
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        assert back[k].tobytes() == arrays[k].tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"not a checkpoint\n")
    with pytest.raises(CheckpointError):
        load_arrays(tmp_path / "bad.ckpt")


def test_params_checksum_and_frozen():
    p = Params()
    p.add("w", np.ones(3))
    p.add("B", np.ones(2), trainable=False)
    assert p.count() == 3
    assert "B" not in p.trainable()
    c = p.checksum()
    p["w"].data = p["w"].data + 1
    assert p.checksum() != c
