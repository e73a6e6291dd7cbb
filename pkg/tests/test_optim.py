import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texhand.diffcore import Tensor, precision
from texhand.synthtrain.optim import Adam
from texhand.synthtrain.warmup import TrainConfig, learning_rate


def test_adam_first_step_matches_closed_form():
    with precision("f64"):
        w = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
        opt = Adam({"w": w}, lr=0.1)
        w.grad = np.array([0.3, -4.0, 1e-3])
        opt.step()
    # bias-corrected first step moves every coordinate by lr·g/(|g| + ε') ≈ lr·sign(g)
    np.testing.assert_allclose(w.data, [0.9, -1.9, 0.4], atol=1e-5)


def test_adam_two_steps_match_reference():
    g1, g2 = np.array([0.5, -1.0]), np.array([0.1, 0.2])
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    x = np.array([0.0, 1.0])
    m = v = np.zeros(2)
    ref = x.copy()
    for t, g in enumerate((g1, g2), 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref = ref - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    with precision("f64"):
        w = Tensor(x, requires_grad=True)
        opt = Adam({"w": w}, lr, (b1, b2), eps)
        for g in (g1, g2):
            w.grad = g.copy()
            opt.step()
    np.testing.assert_allclose(w.data, ref, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 5))
def test_zero_gradient_leaves_params_bit_identical(seed, steps):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.standard_normal(4), requires_grad=True)
    before = w.data.tobytes()
    opt = Adam({"w": w}, 1e-2)
    for _ in range(steps):
        w.grad = np.zeros(4)
        opt.step()
    assert w.data.tobytes() == before


def test_lr_zero_and_missing_grad():
    w = Tensor(np.ones(3), requires_grad=True)
    opt = Adam({"w": w}, 0.0)
    w.grad = np.ones(3)
    opt.step()
    assert np.all(w.data == 1)
    opt.lr = 0.1
    opt.zero_grad()
    assert w.grad is None
    opt.step()
    assert np.all(w.data == 1)


def test_cosine_schedule_shape():
    cfg = TrainConfig(steps=1000, lr=1e-3, lr_warmup=100, lr_final=0.05)
    assert learning_rate(50, cfg) == pytest.approx(5e-4)
    assert learning_rate(100, cfg) == pytest.approx(1e-3)
    assert learning_rate(1000, cfg) == pytest.approx(5e-5)
    lrs = [learning_rate(s, cfg) for s in range(100, 1001)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert learning_rate(10, TrainConfig(lr_schedule="constant")) == 1e-3
