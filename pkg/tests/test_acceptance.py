"""End-to-end acceptance checks.

Each test records one PASS/FAIL line that is printed in the terminal summary
(see conftest.py).  The warm-started model is trained once with the desk
configuration and cached under the pytest cache, keyed by the run id and a
hash of the package sources.
"""
import time

import numpy as np
import pytest
from oracles import naive_dft2, naive_ssim

from texhand.cli import run as cli_run
from texhand.diffcore import Tensor, no_grad, precision
from texhand.geom.handasset import toy_hand
from texhand.geom.rig import apply_pose
from texhand.gradsuite import run_suite
from texhand.lossmetrics import LossConfig, ssim, weak_loss
from texhand.render import render_textured
from texhand.sampler import SampleSet, SupervisionTarget
from texhand.synthtrain import density_ablation, finetune_variants, format_table, weakly_monotone
from texhand.synthtrain.refine import refinement_experiment
from texhand.synthtrain.warmup import observation_set, predict_texture
from texhand.texnet import tex_forward

pytestmark = pytest.mark.slow


def test_1_gradient_fidelity(record):
    t0 = time.perf_counter()
    reports = run_suite(seeds=(0, 1, 2), tol=1e-4, h=1e-5)
    secs = time.perf_counter() - t0
    worst = max(reports, key=lambda r: r.max_rel_err)
    failed = [r.name for r in reports if not r.passed]
    ok = not failed and secs < 120
    record(1, "gradient fidelity", ok, f"{len(reports)} checks, worst rel err {worst.max_rel_err:.2e} "
                                       f"({worst.name}), {secs:.1f} s")
    assert not failed, failed
    assert secs < 120


def test_2_permutation_invariance(record, warm):
    params, cfg = warm.params, warm.config
    rng = np.random.default_rng(7)
    uv, color = rng.random((256, 2)), rng.random((256, 3))
    with precision("f32"), no_grad():
        ref = tex_forward(SampleSet(uv, color), params, cfg).data
        dev = 0.0
        for _ in range(50):
            perm = rng.permutation(256)
            out = tex_forward(SampleSet(uv[perm], color[perm]), params, cfg).data
            dev = max(dev, float(np.abs(out - ref).max()))
    ok = dev < 1e-5 and ref.dtype == np.float32
    record(2, "permutation invariance", ok, f"max deviation {dev:.2e} over 50 permutations (f32)")
    assert ok


def test_3_fourier_oracle(record):
    worst = 0.0
    with precision("f64"):
        for i in range(10):
            rng = np.random.default_rng(100 + i)
            pred, tgt = rng.random((3, 8, 8)), rng.random((3, 8, 8))
            mask = (rng.random((8, 8)) > 0.3).astype(float)
            lcfg = LossConfig(lambda_freq=1.0)
            _, parts = weak_loss(Tensor(pred, dtype=np.float64), SupervisionTarget(tgt, mask), lcfg)
            m = mask[None]
            expected = sum(np.abs(np.abs(naive_dft2(pred[c] * m[0])) - np.abs(naive_dft2(tgt[c] * m[0]))).sum()
                           for c in range(3)) / 64
            worst = max(worst, abs(parts["fourier"] - expected))
    ok = worst < 1e-9
    record(3, "Fourier-loss oracle", ok, f"max |diff| {worst:.1e} on 10 random 8x8 cases")
    assert ok


def test_4_round_trip(record, warm, eval_scenes):
    mesh = toy_hand()
    errs = []
    for i, sc in enumerate(eval_scenes):
        tex = predict_texture(observation_set(sc, mesh, seed=i), warm.params, warm.config)
        _, h, w = sc.image.shape
        out = render_textured(apply_pose(mesh, sc.gt_pose), mesh.faces, mesh.face_uvs, tex, sc.camera, w, h)
        errs.append(float(np.abs(np.asarray(out.image.data) - sc.image)[:, out.coverage].mean()))
    errs = np.array(errs)
    frac = float((errs < 0.05).mean())
    ok = len(errs) == 64 and frac >= 0.9
    record(4, "round-trip consistency", ok, f"{frac:.0%} of {len(errs)} scenes below 0.05 "
                                           f"(mean {errs.mean():.4f}, worst {errs.max():.4f})")
    assert ok


def test_5_density_trend(record, warm, eval_scenes):
    t0 = time.perf_counter()
    rows = density_ablation(warm.params, warm.config, eval_scenes)
    secs = time.perf_counter() - t0
    table = format_table(rows)
    print("\n" + table)
    first, last = rows[0], rows[-1]
    ok = (first.density == 200 and last.density is None and last.l1 < first.l1 and last.ssim > first.ssim
          and weakly_monotone(rows, 0.3) and secs < 600)
    summary = ", ".join(f"{r.label}: {r.l1:.2f}/{r.ssim:.3f}" for r in rows)
    record(5, "density trend", ok, f"L1/SSIM {summary}; {secs:.0f} s")
    assert table.splitlines()[0] == "| # visible UV pixels | L1 ↓ | SSIM ↑ |"
    assert ok


def test_6_warmup_convergence(record, warm):
    init, final = warm.init_eval["weak_loss"], warm.final_eval["weak_loss"]
    ratio = init / final
    ok = ratio >= 5 and warm.steps <= 5000 and warm.seconds < 1800
    cached = " (cached)" if warm.cached else ""
    record(6, "warm-up convergence", ok, f"held-out weak loss {init:.4f} -> {final:.4f} ({ratio:.2f}x) in "
                                         f"{warm.steps} steps, {warm.seconds:.0f} s{cached}")
    assert ok


def test_7_pose_refinement(record, warm, eval_scenes, run_config):
    scenes = eval_scenes[:20]
    tcfg, lcfg = run_config.train, run_config.loss
    exp = refinement_experiment(scenes, warm.params, warm.config, tcfg, lcfg)
    control = refinement_experiment(scenes, warm.params, warm.config, tcfg, LossConfig(lambda_tex=0.0))
    frac = exp.improved_fraction
    p0, p1 = exp.pck_init[1], exp.pck_final[1]
    ctrl_same = bool(np.array_equal(control.err_final, control.err_init))
    ok = frac >= 0.7 and p1 > p0 and ctrl_same and control.pck_final[1] == control.pck_init[1]
    record(7, "pose-refinement benefit", ok,
           f"improved {frac:.0%} of 20, PCK@0.10 {p0:.3f} -> {p1:.3f}, mean err "
           f"{exp.err_init.mean():.2f} -> {exp.err_final.mean():.2f} px; control unchanged: {ctrl_same}")
    assert ok


def test_8_variant_contracts(record, warm, train_scenes, eval_scenes, run_config):
    results = finetune_variants(warm.params, warm.config, train_scenes, eval_scenes[:20], run_config.train,
                                run_config.loss)
    by = {r.variant: r for r in results}
    ok = (set(by) == {"H", "H&M", "H&M*"} and not by["H"].texture_changed and by["H&M"].texture_changed
          and by["H&M*"].texture_changed and all(r.pck.shape == (3,) and np.isfinite(r.pck).all() for r in results))
    order = sorted(results, key=lambda r: -r.pck[1])
    rows = "; ".join(f"{r.variant} PCK {'/'.join(f'{x:.2f}' for x in r.pck)}" for r in results)
    record(8, "variant contracts", ok, f"{rows}; order by PCK@0.10: {' > '.join(r.variant for r in order)}")
    assert ok


def test_9_ssim_correctness(record):
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(900 + i)
        a = rng.random((32, 32))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.5), a.shape), 0, 1)
        worst = max(worst, abs(ssim(a, b) - naive_ssim(a, b)))
    x = np.random.default_rng(1).random((3, 32, 32))
    ident = ssim(x, x)
    ok = worst < 1e-6 and ident == 1.0
    record(9, "SSIM correctness", ok, f"max |diff| {worst:.1e} on 20 pairs; ssim(x, x) = {ident!r}")
    assert ok


def test_10_determinism(record, tmp_path, capsys):
    small = ["--set", "texnet.K=1", "--set", "texnet.D_pos=10", "--set", "texnet.ffn=16", "--set", "texnet.grid=4",
             "--set", "texnet.U=2", "--set", "texnet.dec_channels=[8,4]", "--set", "scene.texture.size=16",
             "--set", "train.eval_every=5", "--set", "train.eval_scenes=2"]
    data = tmp_path / "data"
    assert cli_run(["gen-data", "--out", str(data), "--n-train", "4", "--n-eval", "2", *small]) == 0
    blobs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = cli_run(["warmup", "--data", str(data), "--steps", "10", "--threads", "1", "--seed", "3",
                        "--out", str(out), *small])
        assert code == 0
        (csv_path,) = out.glob("warmup-*/metrics.csv")
        blobs.append(csv_path.read_bytes())
    capsys.readouterr()
    ok = blobs[0] == blobs[1] and len(blobs[0]) > 0
    record(10, "determinism", ok, f"two warm-up runs with --threads 1 --seed 3: metrics.csv "
                                  f"{'bit-identical' if ok else 'differs'} ({len(blobs[0])} bytes)")
    assert ok
