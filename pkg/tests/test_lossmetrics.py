import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import naive_dft2, naive_ssim
from texhand.diffcore import Tensor, backward, precision
from texhand.lossmetrics import (
    LossConfig, MetricReport, MetricWriter, base_loss, l1_255, pck, read_metrics, ssim, total_loss, weak_loss,
)
from texhand.sampler import SupervisionTarget


def _target(rng, size=8, p=0.5):
    mask = (rng.random((size, size)) < p).astype(float)
    return SupervisionTarget(rng.random((3, size, size)) * mask, mask)


def fourier_oracle(pred, tgt):
    h, w = tgt.mask.shape
    total = 0.0
    for c in range(3):
        a = np.abs(naive_dft2(pred[c] * tgt.mask))
        b = np.abs(naive_dft2(tgt.t_star[c] * tgt.mask))
        total += np.abs(a - b).sum()
    return total / (h * w)


# -- weak loss ---------------------------------------------------------------------

def test_weak_loss_zero_when_prediction_matches_on_mask(rng):
    tgt = _target(rng)
    pred = np.where(tgt.mask[None] > 0, tgt.t_star, rng.random((3, 8, 8)))
    with precision("f64"):
        loss, parts = weak_loss(Tensor(pred), tgt, LossConfig())
    assert parts["l1"] == 0.0
    assert parts["fourier"] < 1e-12


def test_weak_loss_empty_mask_is_zero(rng):
    tgt = SupervisionTarget(np.zeros((3, 8, 8)), np.zeros((8, 8)))
    pred = Tensor(rng.random((3, 8, 8)), requires_grad=True)
    loss, parts = weak_loss(pred, tgt, LossConfig())
    assert float(loss.data) == 0.0 and parts["total"] == 0.0
    backward(loss)
    assert not pred.grad.any()


@pytest.mark.parametrize("case", range(10))
def test_fourier_term_matches_naive_dft(case):
    rng = np.random.default_rng(100 + case)
    tgt = _target(rng)
    pred = rng.random((3, 8, 8))
    with precision("f64"):
        _, parts = weak_loss(Tensor(pred), tgt, LossConfig())
    assert abs(parts["fourier"] - fourier_oracle(pred, tgt)) < 1e-9


def test_l1_term_normalization(rng):
    tgt = _target(rng)
    pred = rng.random((3, 8, 8))
    with precision("f64"):
        _, parts = weak_loss(Tensor(pred), tgt, LossConfig(lambda_freq=0.0))
    m = tgt.mask > 0
    assert parts["l1"] == pytest.approx(np.abs(pred - tgt.t_star)[:, m].mean(), abs=1e-12)
    assert parts["total"] == pytest.approx(parts["l1"], abs=1e-15)


def test_fourier_term_circular_shift_invariant(rng):
    tgt = _target(rng)
    pred = rng.random((3, 8, 8))
    shifted = SupervisionTarget(np.roll(tgt.t_star, (3, -2), axis=(1, 2)), np.roll(tgt.mask, (3, -2), axis=(0, 1)))
    with precision("f64"):
        _, a = weak_loss(Tensor(pred), tgt, LossConfig())
        _, b = weak_loss(Tensor(np.roll(pred, (3, -2), axis=(1, 2))), shifted, LossConfig())
    assert abs(a["fourier"] - b["fourier"]) < 1e-9
    assert a["l1"] == pytest.approx(b["l1"], abs=1e-12)


def test_weak_loss_extent_mismatch(rng):
    with pytest.raises(ValueError):
        weak_loss(Tensor(rng.random((3, 4, 4))), _target(rng), LossConfig())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0, 2))
def test_weak_loss_non_negative(seed, lam):
    rng = np.random.default_rng(seed)
    tgt = _target(rng, 4)
    loss, _ = weak_loss(Tensor(rng.random((3, 4, 4))), tgt, LossConfig(lambda_freq=lam))
    assert float(loss.data) >= 0


# -- total loss ----------------------------------------------------------------------

def test_total_loss_cases():
    with precision("f64"):
        base, photo = Tensor(0.7), Tensor(0.3)
        t0, _ = total_loss(base, photo, LossConfig(lambda_tex=0.0))
        assert t0 is base
        t1, parts = total_loss(Tensor(0.0), photo, LossConfig(lambda_tex=1.0))
        assert float(t1.data) == 0.3 and parts["photometric"] == 0.3


def test_total_loss_gradient_linearity(rng):
    with precision("f64"):
        x0 = rng.standard_normal(5)

        def grad(fn):
            x = Tensor(x0, requires_grad=True)
            backward(fn(x))
            return x.grad

        from texhand.diffcore import ops
        fb = lambda x: ops.sum_(ops.sin(x))
        fp = lambda x: ops.mean(ops.absolute(ops.sub(x, 0.1)))
        cfg = LossConfig(lambda_tex=0.37)
        g = grad(lambda x: total_loss(fb(x), fp(x), cfg)[0])
        np.testing.assert_allclose(g, grad(fb) + 0.37 * grad(fp), atol=1e-12, rtol=0)


def test_base_loss_zero_at_truth(rng):
    kp = rng.random((16, 2)) * 100
    par = rng.standard_normal(11)
    loss, parts = base_loss(Tensor(kp), kp, Tensor(par), par, 80.0, LossConfig())
    assert float(loss.data) == 0.0 and parts["keypoint"] == 0.0


def test_loss_config_validation():
    with pytest.raises(ValueError, match="lambda_tex"):
        LossConfig(lambda_tex=-1).validate()


# -- SSIM ------------------------------------------------------------------------------

@pytest.mark.parametrize("case", range(20))
def test_ssim_matches_independent_implementation(case):
    rng = np.random.default_rng(200 + case)
    a = rng.random((32, 32))
    b = np.clip(a + rng.normal(0, 0.2, (32, 32)), 0, 1) if case % 2 else rng.random((32, 32))
    assert abs(ssim(a, b) - naive_ssim(a, b)) < 1e-6


def test_ssim_multichannel_matches_oracle(rng):
    a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
    assert abs(ssim(a, b) - naive_ssim(a, b)) < 1e-6


def test_ssim_identity_exact(rng):
    x = rng.random((3, 20, 20))
    assert ssim(x, x) == 1.0


@pytest.mark.parametrize("m1,m2", [(0.2, 0.7), (0.5, 0.5), (0.0, 1.0)])
def test_ssim_constant_images_closed_form(m1, m2):
    c1 = 1e-4
    expect = (2 * m1 * m2 + c1) / (m1 ** 2 + m2 ** 2 + c1)  # contrast/structure factor is c2/c2 = 1
    assert ssim(np.full((16, 16), m1), np.full((16, 16), m2)) == pytest.approx(expect, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, (12, 12), elements=st.floats(0, 1)), arrays(np.float64, (12, 12), elements=st.floats(0, 1)))
def test_ssim_symmetric_and_bounded(a, b):
    s = ssim(a, b)
    assert abs(s - ssim(b, a)) < 1e-12
    assert -1 - 1e-9 <= s <= 1 + 1e-9


def test_ssim_errors():
    with pytest.raises(ValueError):
        ssim(np.zeros((16, 16)), np.zeros((16, 15)))
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_l1_255():
    assert l1_255(np.zeros((2, 2)), np.full((2, 2), 0.5)) == pytest.approx(127.5)


# -- PCK ---------------------------------------------------------------------------------

def test_pck_examples():
    gt = np.array([[0.0, 0.0], [10.0, 10.0]])
    np.testing.assert_array_equal(pck(gt, gt, 50.0), [100, 100, 100])
    pred = gt + [[1.0, 0.0], [0.0, 20.0]]
    np.testing.assert_array_equal(pck(pred, gt, 20.0), [50, 50, 50])


def test_pck_errors():
    with pytest.raises(ValueError):
        pck(np.zeros((0, 2)), np.zeros((0, 2)), 10.0)
    with pytest.raises(ValueError):
        pck(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_pck_monotone_in_threshold(seed):
    rng = np.random.default_rng(seed)
    p = pck(rng.random((16, 2)) * 40, rng.random((16, 2)) * 40, 60.0)
    assert p[0] <= p[1] <= p[2]


# -- metrics file --------------------------------------------------------------------------

def test_metric_writer_columns_and_blank_cells(tmp_path):
    w = MetricWriter(tmp_path / "metrics.csv", "abc123")
    w.write(5, "eval", MetricReport(l1=3.25, ssim=0.9))
    w.write(6, "eval:H", MetricReport(pck=[10.0, 20.0, 30.0]))
    rows = read_metrics(tmp_path / "metrics.csv")
    assert list(rows[0]) == ["run_id", "step", "split", "l1", "ssim", "pck05", "pck10", "pck15"]
    assert rows[0]["l1"] == "3.25" and rows[0]["pck05"] == ""
    assert rows[1]["pck15"] == "30.0" and rows[1]["ssim"] == ""
