"""Time the compiled rasterizer kernel against the numpy fallback.

    python3 benchmarks/bench_raster.py --sizes 128 256 512 --repeat 5
"""
import argparse
import timeit

import numpy as np

from texhand.geom import Camera, PoseParams, apply_pose, toy_hand
from texhand.geom.raster import BACKENDS, rasterize


def scene(size: int, seed: int):
    rng = np.random.default_rng(seed)
    mesh = toy_hand()
    pose = PoseParams(rng.normal(0, 0.3, 3), [0.0, -3.0, 0.0], rng.uniform(0, 1.2, 5))
    cam = Camera.looking_at_origin(45.0, 250.0 * size / 128, size, size)
    return mesh, apply_pose(mesh, pose), cam


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[128, 256, 512])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    names = sorted(BACKENDS)
    if "compiled" not in BACKENDS:
        print("compiled backend not built; timing the fallback only")
    print(f"{'size':>6} " + " ".join(f"{n + ' ms':>12}" for n in names) + f" {'speedup':>9} {'identical':>10}")
    for size in args.sizes:
        mesh, verts, cam = scene(size, args.seed)
        times, bufs = {}, {}
        for name in names:
            bufs[name] = rasterize(verts, mesh.faces, mesh.face_uvs, cam, size, size, backend=name)
            t = timeit.repeat(lambda: rasterize(verts, mesh.faces, mesh.face_uvs, cam, size, size, backend=name),
                              number=1, repeat=args.repeat)
            times[name] = 1e3 * min(t)
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        same = bufs["python"].equals(bufs["compiled"]) if "compiled" in bufs else "n/a"
        print(f"{size:>6} " + " ".join(f"{times[n]:>12.2f}" for n in names) + f" {speed:>9.1f} {str(same):>10}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
