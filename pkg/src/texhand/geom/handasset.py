"""Procedural toy hand: a box palm and five two-segment tube fingers.

Rest pose: fingers point along +y, the back of the hand faces +z, the palm
faces -z.  A finger curl bends both of its joints by the same angle toward
the palm.  The UV atlas packs one chart for each palm face, one strip for the
palm rim, and one unwrapped tube per finger.
"""
from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from texhand.geom.mesh import Rig, TriMesh, load_mesh

ASSET_NAME = "toy_hand"

PALM_HALF = (4.0, 4.5, 1.1)
PALM_CELLS = (8, 9)
N_SIDE = 8
RINGS_PER_SEGMENT = 4
BLEND = 0.45

# name, base position, direction, radius, (proximal, distal) lengths
FINGERS = (
    ("thumb", (-3.7, -1.2, 0.0), (-0.75, 1.0, 0.0), 0.85, (2.9, 2.4)),
    ("index", (-3.0, 4.1, 0.0), (0.0, 1.0, 0.0), 0.75, (3.4, 2.6)),
    ("middle", (-1.0, 4.1, 0.0), (0.0, 1.0, 0.0), 0.78, (3.8, 2.9)),
    ("ring", (1.0, 4.1, 0.0), (0.0, 1.0, 0.0), 0.75, (3.5, 2.7)),
    ("pinky", (3.0, 4.1, 0.0), (0.0, 1.0, 0.0), 0.66, (2.8, 2.1)),
)

PALM_BACK_CHART = (0.02, 0.02, 0.48, 0.38)
PALM_FRONT_CHART = (0.52, 0.02, 0.98, 0.38)
RIM_CHART = (0.02, 0.41, 0.98, 0.47)
FINGER_CHART_V = (0.50, 0.91, 0.98)   # tube start, tube end / cap base, cap apex


def finger_chart(i: int) -> tuple:
    w = 0.96 / len(FINGERS)
    u0 = 0.02 + i * w
    return (u0 + 0.01, FINGER_CHART_V[0], u0 + w - 0.01, FINGER_CHART_V[2])


def _lerp(a, b, t):
    return a + (b - a) * t


class _Builder:
    def __init__(self):
        self.verts: list = []
        self.weights: list = []
        self.faces: list = []
        self.uvs: list = []

    def vertex(self, p, w) -> int:
        self.verts.append(np.asarray(p, dtype=np.float64))
        self.weights.append(w)
        return len(self.verts) - 1

    def tri(self, ids, uvs, outward):
        a, b, c = (self.verts[i] for i in ids)
        n = np.cross(b - a, c - a)
        if np.dot(n, outward) < 0:
            ids = (ids[0], ids[2], ids[1])
            uvs = (uvs[0], uvs[2], uvs[1])
        self.faces.append(ids)
        self.uvs.append(uvs)

    def quad(self, ids, uvs, outward):
        self.tri((ids[0], ids[1], ids[2]), (uvs[0], uvs[1], uvs[2]), outward)
        self.tri((ids[0], ids[2], ids[3]), (uvs[0], uvs[2], uvs[3]), outward)


def _palm(b: _Builder, num_joints: int) -> tuple[dict, int]:
    hx, hy, hz = PALM_HALF
    nx, ny = PALM_CELLS
    root_w = np.zeros(num_joints)
    root_w[0] = 1.0
    grids = {}
    for side, z in (("back", hz), ("front", -hz)):
        ids = np.zeros((ny + 1, nx + 1), dtype=np.int64)
        for r in range(ny + 1):
            for c in range(nx + 1):
                ids[r, c] = b.vertex((-hx + 2 * hx * c / nx, hy - 2 * hy * r / ny, z), root_w)
        grids[side] = ids
    for side, chart, out in (("back", PALM_BACK_CHART, (0, 0, 1)), ("front", PALM_FRONT_CHART, (0, 0, -1))):
        ids = grids[side]
        u0, v0, u1, v1 = chart

        def uv(r, c, side=side):
            t = c / nx if side == "back" else 1 - c / nx
            return (_lerp(u0, u1, t), _lerp(v0, v1, r / ny))

        for r in range(ny):
            for c in range(nx):
                b.quad((ids[r, c], ids[r, c + 1], ids[r + 1, c + 1], ids[r + 1, c]),
                       (uv(r, c), uv(r, c + 1), uv(r + 1, c + 1), uv(r + 1, c)), np.array(out, float))
    # rim: walk the grid boundary once
    loop = [(0, c) for c in range(nx)] + [(r, nx) for r in range(ny)] \
        + [(ny, c) for c in range(nx, 0, -1)] + [(r, 0) for r in range(ny, 0, -1)]
    u0, v0, u1, v1 = RIM_CHART
    n = len(loop)
    for k in range(n):
        (r0, c0), (r1, c1) = loop[k], loop[(k + 1) % n]
        a, bb = grids["back"][r0, c0], grids["back"][r1, c1]
        fa, fb = grids["front"][r0, c0], grids["front"][r1, c1]
        ua, ub = _lerp(u0, u1, k / n), _lerp(u0, u1, (k + 1) / n)
        mid = 0.5 * (b.verts[a] + b.verts[bb])
        out = np.array([mid[0], mid[1], 0.0])
        b.quad((a, bb, fb, fa), ((ua, v0), (ub, v0), (ub, v1), (ua, v1)), out)
    wrist = int(grids["back"][ny, nx // 2])
    return grids, wrist


def _frame(direction):
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    back = np.array([0.0, 0.0, 1.0])
    side = np.cross(d, back)
    side /= np.linalg.norm(side)
    up = np.cross(side, d)
    return d, side, up


def _step(s, s0):
    return float(np.clip((s - s0) / (2 * BLEND) + 0.5, 0.0, 1.0))


def build_toy_hand() -> TriMesh:
    num_joints = 1 + 2 * len(FINGERS)
    b = _Builder()
    _, wrist = _palm(b, num_joints)

    parents = [-1]
    rest = [np.zeros(3)]
    axes = [np.array([1.0, 0.0, 0.0])]
    curl = [-1]
    names = ["palm"]
    keypoints = [wrist]

    for fi, (name, base, direction, radius, (l1, l2)) in enumerate(FINGERS):
        d, side, up = _frame(direction)
        base = np.asarray(base, dtype=np.float64)
        ja, jb = 1 + 2 * fi, 2 + 2 * fi
        axis = np.cross(d, -up)        # rotating d about axis bends it toward the palm (-up)
        parents += [0, ja]
        rest += [base, base + l1 * d]
        axes += [axis, axis]
        curl += [fi, fi]
        names += [f"{name}_proximal", f"{name}_distal"]

        stations = [l1 * k / RINGS_PER_SEGMENT for k in range(RINGS_PER_SEGMENT)] + \
                   [l1 + l2 * k / RINGS_PER_SEGMENT for k in range(RINGS_PER_SEGMENT + 1)]
        u0, v0, u1, v_top = finger_chart(fi)
        v_tube_end = FINGER_CHART_V[1]
        total = l1 + l2
        rings = []
        for s in stations:
            c1, c2 = _step(s, 0.0), _step(s, l1)
            w = np.zeros(num_joints)
            w[0], w[ja], w[jb] = 1 - c1, c1 - c2, c2
            ring = []
            for k in range(N_SIDE):
                ang = 2 * np.pi * k / N_SIDE
                p = base + s * d + radius * (np.cos(ang) * up + np.sin(ang) * side)
                ring.append(b.vertex(p, w))
            rings.append(ring)
        for ri in range(len(stations) - 1):
            va = _lerp(FINGER_CHART_V[0], v_tube_end, stations[ri] / total)
            vb = _lerp(FINGER_CHART_V[0], v_tube_end, stations[ri + 1] / total)
            for k in range(N_SIDE):
                k1 = (k + 1) % N_SIDE
                ua, ub = _lerp(u0, u1, k / N_SIDE), _lerp(u0, u1, (k + 1) / N_SIDE)
                centre = base + 0.5 * (stations[ri] + stations[ri + 1]) * d
                mid = 0.25 * (b.verts[rings[ri][k]] + b.verts[rings[ri][k1]]
                              + b.verts[rings[ri + 1][k]] + b.verts[rings[ri + 1][k1]])
                b.quad((rings[ri][k], rings[ri][k1], rings[ri + 1][k1], rings[ri + 1][k]),
                       ((ua, va), (ub, va), (ub, vb), (ua, vb)), mid - centre)
        tip_w = np.zeros(num_joints)
        tip_w[jb] = 1.0
        tip = b.vertex(base + (total + 0.6 * radius) * d, tip_w)
        for k in range(N_SIDE):
            k1 = (k + 1) % N_SIDE
            ua, ub = _lerp(u0, u1, k / N_SIDE), _lerp(u0, u1, (k + 1) / N_SIDE)
            b.tri((rings[-1][k], rings[-1][k1], tip),
                  ((ua, v_tube_end), (ub, v_tube_end), (0.5 * (u0 + u1), v_top)), d)
        # knuckle (back side of the base ring), middle joint, tip
        keypoints += [rings[0][0], rings[RINGS_PER_SEGMENT][0], tip]

    weights = np.array(b.weights)
    rig = Rig(np.array(parents), np.array(rest), np.array(axes), np.array(curl), weights, names)
    charts = {"palm_back": PALM_BACK_CHART, "palm_front": PALM_FRONT_CHART, "rim": RIM_CHART}
    for fi, f in enumerate(FINGERS):
        charts[f[0]] = finger_chart(fi)
        charts[f[0] + "_joint_v"] = _lerp(FINGER_CHART_V[0], FINGER_CHART_V[1], f[4][0] / sum(f[4]))
    mesh = TriMesh(np.array(b.verts), np.array(b.faces), np.array(b.uvs), rig, np.array(keypoints), charts)
    mesh.validate()
    return mesh


def asset_dir() -> Path:
    return Path(str(resources.files("texhand") / "assets"))


@lru_cache(maxsize=1)
def _cached_toy_hand() -> TriMesh:
    return load_mesh(asset_dir() / f"{ASSET_NAME}.obj")


def toy_hand() -> TriMesh:
    """The bundled toy hand asset (loaded from the packaged OBJ + rig)."""
    return _cached_toy_hand()
