"""texhand command-line interface.

Every command accepts --config (JSON), --seed, --threads, --precision and
--out; flags override the config file, which overrides TEXHAND__SECTION__FIELD
environment variables, which override built-in defaults.  Failures exit
nonzero with a one-line diagnostic on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("texhand")

COMMANDS = ("gen-data", "warmup", "reconstruct", "render", "refine", "finetune", "ablate-density",
            "evaluate", "grad-check", "dump-config")


class CLIError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="global seed (default 0)")
    p.add_argument("--threads", type=int, help="BLAS/OpenMP thread budget (default 1)")
    p.add_argument("--precision", choices=("f32", "f64"), help="floating-point mode (default f32)")
    p.add_argument("--out", help="output root directory (default runs/)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                   help="override one config field (value parsed as JSON when possible)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="texhand", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", help="generate the synthetic desk dataset")
    _common(p)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-eval", type=int)

    p = sub.add_parser("warmup", help="warm up the texture model on weak supervision")
    _common(p)
    p.add_argument("--data", help="dataset root (generated in memory when omitted)")
    p.add_argument("--steps", type=int)

    p = sub.add_parser("reconstruct", help="predict a full texture for one scene")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True, help="scene directory (image.ppm, pose.txt, camera.txt)")
    p.add_argument("--occluded", action="store_true", help="drop every observation (L = 0)")

    p = sub.add_parser("render", help="render the toy hand for a scene's pose and camera")
    _common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--texture", help="texture PPM (default: the scene's texture.ppm)")

    p = sub.add_parser("refine", help="photometric pose refinement from perturbed poses")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--scenes", type=int, default=20)

    p = sub.add_parser("finetune", help="train the toy head under the H, H&M and H&M* variants")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")

    p = sub.add_parser("ablate-density", help="reconstruction quality versus observation count")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")

    p = sub.add_parser("evaluate", help="texture metrics on the eval split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("grad-check", help="finite-difference gradient checks of every primitive")
    _common(p)
    p.add_argument("--quick", action="store_true", help="skip the skinning and rendering graphs")

    p = sub.add_parser("dump-config", help="print the effective configuration as JSON")
    _common(p)
    return parser


def _overrides(args) -> dict:
    from texhand.config import _parse_value

    ov = {"seed": args.seed, "threads": args.threads, "precision": args.precision, "out": args.out}
    for item in args.set:
        if "=" not in item:
            raise CLIError(f"--set expects SECTION.FIELD=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        ov[key] = _parse_value(val)
    if getattr(args, "steps", None) is not None:
        ov["train.steps"] = args.steps
    if getattr(args, "n_train", None) is not None:
        ov["data.n_train"] = args.n_train
    if getattr(args, "n_eval", None) is not None:
        ov["data.n_eval"] = args.n_eval
    if getattr(args, "data", None):
        ov["data.root"] = args.data
    return ov


def _datasets(cfg, need_train: bool = True):
    from texhand.synthtrain.data import gen_dataset, load_dataset, scene_dirs

    root = cfg.data.root
    if root:
        if not Path(root).exists():
            raise CLIError(f"data directory not found: {root}")
        if not scene_dirs(root):
            raise CLIError(f"no scenes found under {root}")
        train = load_dataset(root, "train") if need_train else []
        ev = load_dataset(root, "eval")
        if not ev:
            ev = load_dataset(root)
        return train, ev
    train = gen_dataset(cfg.data.n_train, cfg.seed, cfg.scene) if need_train else []
    ev = gen_dataset(cfg.data.n_eval, cfg.seed, cfg.scene, offset=10 ** 6)
    return train, ev


def _load_checkpoint(path, cfg):
    from texhand.texnet import load_model

    if not Path(path).exists():
        raise CLIError(f"checkpoint not found: {path}")
    try:
        return load_model(path, cfg.texnet)
    except ValueError as exc:
        raise CLIError(str(exc)) from None


def _prepare_out(cfg, command: str) -> Path:
    out = cfg.run_dir(command)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps())
    return out


def cmd_gen_data(cfg, args) -> int:
    from texhand.synthtrain.data import gen_dataset, write_dataset

    train = gen_dataset(cfg.data.n_train, cfg.seed, cfg.scene)
    ev = gen_dataset(cfg.data.n_eval, cfg.seed, cfg.scene, offset=10 ** 6)
    root = Path(cfg.data.root or cfg.out)
    write_dataset(root, train, ev, cfg.to_dict())
    print(f"wrote {len(train)} train and {len(ev)} eval scenes to {root}")
    return 0


def cmd_warmup(cfg, args) -> int:
    from texhand.synthtrain.warmup import warmup_train
    from texhand.texnet import init_params

    train, ev = _datasets(cfg)
    if not train:
        raise CLIError("no training scenes found")
    out = _prepare_out(cfg, "warmup")
    params = init_params(cfg.texnet)
    res = warmup_train(params, cfg.texnet, train, ev, cfg.train, cfg.loss, out, cfg.run_id)
    print(f"warm-up done: {res.steps_run} steps, held-out weak loss "
          f"{res.init_eval.get('weak_loss', float('nan')):.4f} -> {res.final_eval.get('weak_loss', float('nan')):.4f}; "
          f"outputs in {out}")
    return 0


def cmd_reconstruct(cfg, args) -> int:
    from texhand.geom.handasset import toy_hand
    from texhand.geom.rig import apply_pose
    from texhand.imageio import side_by_side, write_ppm
    from texhand.sampler import SampleSet, extract_samples, splat_to_uv, write_samples_csv
    from texhand.synthtrain.data import read_scene
    from texhand.synthtrain.warmup import predict_texture

    params, tcfg = _load_checkpoint(args.checkpoint, cfg)
    scene = read_scene(args.scene)
    mesh = toy_hand()
    if args.occluded:
        samples = SampleSet.empty()
    else:
        verts = apply_pose(mesh, scene.gt_pose)
        samples = extract_samples(scene.image, verts, mesh.faces, mesh.face_uvs, scene.camera, seed=cfg.seed)
    tex = predict_texture(samples, params, tcfg)
    s = tex.shape[-1]
    splat = splat_to_uv(samples, s, s)
    out = _prepare_out(cfg, "reconstruct")
    write_ppm(out / "texture.ppm", tex)
    write_ppm(out / "partial.ppm", splat.t_star)
    write_samples_csv(out / "samples.csv", samples)
    crop = scene.image
    panel = side_by_side([crop, _resize_nearest(splat.t_star, crop.shape[1]), _resize_nearest(tex, crop.shape[1])])
    write_ppm(out / "panel.ppm", panel)
    print(f"reconstructed texture from {len(samples)} observations -> {out / 'texture.ppm'}")
    return 0


def _resize_nearest(img: np.ndarray, size: int) -> np.ndarray:
    idx = (np.arange(size) * img.shape[-1] // size).astype(int)
    return img[:, idx][:, :, idx]


def cmd_render(cfg, args) -> int:
    from texhand.geom.handasset import toy_hand
    from texhand.geom.rig import apply_pose
    from texhand.imageio import read_ppm, write_pgm, write_ppm
    from texhand.render import render_textured
    from texhand.synthtrain.data import read_scene

    scene = read_scene(args.scene)
    tex = read_ppm(args.texture) if args.texture else scene.gt_texture
    mesh = toy_hand()
    verts = apply_pose(mesh, scene.gt_pose)
    h, w = scene.image.shape[1:]
    outp = render_textured(verts, mesh.faces, mesh.face_uvs, tex, scene.camera, w, h)
    out = _prepare_out(cfg, "render")
    write_ppm(out / "render.ppm", outp.image.data)
    write_pgm(out / "coverage.pgm", outp.coverage)
    print(f"rendered {int(outp.coverage.sum())} covered pixels -> {out / 'render.ppm'}")
    return 0


def cmd_refine(cfg, args) -> int:
    from texhand.geom.handasset import toy_hand
    from texhand.lossmetrics import MetricReport, MetricWriter
    from texhand.synthtrain.refine import refinement_experiment

    _, ev = _datasets(cfg, need_train=False)
    if not ev:
        raise CLIError("no scenes found")
    params, tcfg = _load_checkpoint(args.checkpoint, cfg)
    out = _prepare_out(cfg, "refine")
    res = refinement_experiment(ev[:args.scenes], params, tcfg, cfg.train, cfg.loss, toy_hand(), cfg.seed)
    writer = MetricWriter(out / "metrics.csv", cfg.run_id)
    writer.write(0, "refine:init", MetricReport(pck=res.pck_init.tolist()))
    writer.write(cfg.train.refine_steps, "refine:final", MetricReport(pck=res.pck_final.tolist()))
    res.write_csv(out / "refine.csv")
    print(f"refined {len(res.err_init)} scenes: mean keypoint error {np.mean(res.err_init):.3f} -> "
          f"{np.mean(res.err_final):.3f} px, improved in {res.improved_fraction * 100:.0f}%")
    return 0


def cmd_finetune(cfg, args) -> int:
    from texhand.synthtrain.finetune import finetune_variants

    train, ev = _datasets(cfg)
    params, tcfg = _load_checkpoint(args.checkpoint, cfg)
    out = _prepare_out(cfg, "finetune")
    results = finetune_variants(params, tcfg, train, ev, cfg.train, cfg.loss, out_dir=out, run_id=cfg.run_id)
    for r in results:
        print(f"{r.variant:5s} PCK@0.05 {r.pck[0]:.1f}  @0.10 {r.pck[1]:.1f}  @0.15 {r.pck[2]:.1f}  "
              f"texture updated: {r.texture_changed}")
    return 0


def cmd_ablate(cfg, args) -> int:
    from texhand.synthtrain.ablation import density_ablation, format_table, write_table_csv
    from texhand.lossmetrics import MetricReport, MetricWriter

    _, ev = _datasets(cfg, need_train=False)
    if not ev:
        raise CLIError("no scenes found")
    params, tcfg = _load_checkpoint(args.checkpoint, cfg)
    out = _prepare_out(cfg, "ablate-density")
    rows = density_ablation(params, tcfg, ev, seed=cfg.seed)
    write_table_csv(out / "density.csv", rows)
    writer = MetricWriter(out / "metrics.csv", cfg.run_id)
    for r in rows:
        writer.write(0, f"density:{r.label}", MetricReport(l1=r.l1, ssim=r.ssim))
    table = format_table(rows)
    (out / "density.md").write_text(table + "\n")
    print(table)
    return 0


def cmd_evaluate(cfg, args) -> int:
    from texhand.lossmetrics import MetricReport, MetricWriter
    from texhand.synthtrain.warmup import build_eval_set, evaluate_weak

    _, ev = _datasets(cfg, need_train=False)
    if not ev:
        raise CLIError("no scenes found")
    params, tcfg = _load_checkpoint(args.checkpoint, cfg)
    out = _prepare_out(cfg, "evaluate")
    res = evaluate_weak(params, tcfg, build_eval_set(ev, len(ev)), cfg.loss)
    MetricWriter(out / "metrics.csv", cfg.run_id).write(0, "eval", MetricReport(l1=res["l1"], ssim=res["ssim"]))
    print(f"{len(ev)} scenes: weak loss {res['weak_loss']:.4f}  L1 {res['l1']:.2f}  SSIM {res['ssim']:.4f}")
    return 0


def cmd_grad_check(cfg, args) -> int:
    from texhand.gradsuite import run_suite

    reports = run_suite(quick=args.quick)
    for r in reports:
        print(r.line())
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} gradient checks passed")
    return 1 if failed else 0


def cmd_dump_config(cfg, args) -> int:
    text = cfg.dumps()
    if args.out:
        path = Path(args.out) / "config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    sys.stdout.write(text)
    return 0


HANDLERS = {
    "gen-data": cmd_gen_data, "warmup": cmd_warmup, "reconstruct": cmd_reconstruct, "render": cmd_render,
    "refine": cmd_refine, "finetune": cmd_finetune, "ablate-density": cmd_ablate, "evaluate": cmd_evaluate,
    "grad-check": cmd_grad_check, "dump-config": cmd_dump_config,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits

    from texhand.config import load_config
    from texhand.diffcore import precision

    try:
        cfg = load_config(args.config, _overrides(args))
        with threadpool_limits(limits=cfg.threads), precision(cfg.precision):
            return HANDLERS[args.command](cfg, args)
    except (CLIError, ValueError, FileNotFoundError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"texhand {args.command}: error: {msg}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
