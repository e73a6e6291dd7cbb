"""Triangle meshes with UV atlases and a skinning rig; OBJ/rig/manifest IO."""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


@dataclass
class Rig:
    """Joint chain for linear blend skinning.

    ``curl_dof[j]`` names the pose curl entry driving joint ``j`` (-1 for the
    root, which only follows the global transform).
    """

    parents: np.ndarray        # J, parent index (-1 for root)
    rest: np.ndarray           # J×3 joint positions
    axes: np.ndarray           # J×3 unit rotation axes
    curl_dof: np.ndarray       # J
    weights: np.ndarray        # V×J
    names: list = field(default_factory=list)
    curl_limits: tuple = (0.0, float(np.pi))

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def num_curls(self) -> int:
        return int(self.curl_dof.max()) + 1 if len(self.curl_dof) else 0


@dataclass
class TriMesh:
    vertices: np.ndarray       # V×3
    faces: np.ndarray          # F×3
    face_uvs: np.ndarray       # F×3×2
    rig: Rig | None = None
    keypoint_vertex_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    charts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.face_uvs = np.asarray(self.face_uvs, dtype=np.float64)
        self.keypoint_vertex_ids = np.asarray(self.keypoint_vertex_ids, dtype=np.int64)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def span(self) -> float:
        """Largest axis-aligned extent of the rest-pose vertices."""
        return float(np.ptp(self.vertices, axis=0).max())

    def validate(self) -> None:
        v = self.num_vertices
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError(f"faces must be F×3, got {self.faces.shape}")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= v):
            raise MeshError(f"face index out of range [0, {v})")
        if self.face_uvs.shape != (len(self.faces), 3, 2):
            raise MeshError(f"face_uvs must be F×3×2, got {self.face_uvs.shape}")
        if self.face_uvs.size and (self.face_uvs.min() < 0 or self.face_uvs.max() > 1):
            raise MeshError("UV coordinates outside [0,1]²")
        kp = self.keypoint_vertex_ids
        if len(np.unique(kp)) != len(kp) or (kp.size and (kp.min() < 0 or kp.max() >= v)):
            raise MeshError("keypoint ids must be distinct vertex indices")
        if self.rig is not None:
            w = self.rig.weights
            if w.shape != (v, self.rig.num_joints):
                raise MeshError(f"skinning weights must be V×J, got {w.shape}")
            if w.min() < 0 or np.abs(w.sum(axis=1) - 1).max() > 1e-6:
                raise MeshError("skinning weights must be non-negative and sum to 1 per vertex")
        area = face_areas(self.vertices, self.faces)
        if np.any(area <= 0):
            warnings.warn(f"{int((area <= 0).sum())} degenerate (zero-area) faces kept", RuntimeWarning,
                          stacklevel=2)


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    tri = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


# -- OBJ ---------------------------------------------------------------------

def write_obj(path, mesh: TriMesh) -> None:
    """Write ``v``/``vt``/``f v/vt`` records; one ``vt`` per face corner is deduplicated."""
    uv_keys: dict[tuple, int] = {}
    uv_list = []
    corner_vt = np.zeros((mesh.num_faces, 3), dtype=np.int64)
    for f in range(mesh.num_faces):
        for k in range(3):
            key = (float(mesh.face_uvs[f, k, 0]), float(mesh.face_uvs[f, k, 1]))
            idx = uv_keys.get(key)
            if idx is None:
                idx = uv_keys[key] = len(uv_list)
                uv_list.append(key)
            corner_vt[f, k] = idx
    lines = ["# texhand toy mesh"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"vt {u!r} {v!r}" for u, v in uv_list]
    for f in range(mesh.num_faces):
        a, b, c = (mesh.faces[f] + 1).tolist()
        ta, tb, tc = (corner_vt[f] + 1).tolist()
        lines.append(f"f {a}/{ta} {b}/{tb} {c}/{tc}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_obj(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    verts, uvs, faces, face_vt = [], [], [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            verts.append([float(s) for s in parts[1:4]])
        elif tag == "vt":
            uvs.append([float(s) for s in parts[1:3]])
        elif tag == "f":
            if len(parts) != 4:
                raise MeshError(f"{path}:{lineno}: only triangular faces are supported")
            vi, ti = [], []
            for corner in parts[1:]:
                fields = corner.split("/")
                if len(fields) < 2 or not fields[1]:
                    raise MeshError(f"{path}:{lineno}: face corner {corner!r} has no UV index")
                vi.append(int(fields[0]) - 1)
                ti.append(int(fields[1]) - 1)
            faces.append(vi)
            face_vt.append(ti)
    if not uvs:
        raise MeshError(f"{path}: no vt records (missing UVs)")
    verts = np.array(verts, dtype=np.float64).reshape(-1, 3)
    uvs = np.array(uvs, dtype=np.float64).reshape(-1, 2)
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    face_vt = np.array(face_vt, dtype=np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= len(verts)):
        raise MeshError(f"{path}: vertex index out of range (have {len(verts)} vertices)")
    if face_vt.size and (face_vt.min() < 0 or face_vt.max() >= len(uvs)):
        raise MeshError(f"{path}: vt index {face_vt.max() + 1} out of range (have {len(uvs)} vt)")
    return verts, faces, uvs[face_vt]


# -- rig sidecar -------------------------------------------------------------

def rig_to_dict(rig: Rig, keypoints: np.ndarray) -> dict:
    joints = []
    for j in range(rig.num_joints):
        joints.append({
            "name": rig.names[j] if rig.names else f"joint{j}",
            "parent": int(rig.parents[j]),
            "rest": rig.rest[j].tolist(),
            "axis": rig.axes[j].tolist(),
            "curl": int(rig.curl_dof[j]),
        })
    weights = []
    for row in rig.weights:
        nz = np.nonzero(row)[0]
        weights.append([[int(j), float(row[j])] for j in nz])
    return {
        "joints": joints,
        "curl_limits": list(rig.curl_limits),
        "keypoints": [int(k) for k in keypoints],
        "weights": weights,
    }


def rig_from_dict(d: dict, num_vertices: int) -> tuple[Rig, np.ndarray]:
    joints = d["joints"]
    j = len(joints)
    weights = np.zeros((num_vertices, j))
    if len(d["weights"]) != num_vertices:
        raise MeshError(f"rig has weights for {len(d['weights'])} vertices, mesh has {num_vertices}")
    for v, row in enumerate(d["weights"]):
        for idx, w in row:
            weights[v, idx] = w
    rig = Rig(
        parents=np.array([jt["parent"] for jt in joints], dtype=np.int64),
        rest=np.array([jt["rest"] for jt in joints], dtype=np.float64),
        axes=np.array([jt["axis"] for jt in joints], dtype=np.float64),
        curl_dof=np.array([jt["curl"] for jt in joints], dtype=np.int64),
        weights=weights,
        names=[jt["name"] for jt in joints],
        curl_limits=tuple(d.get("curl_limits", (0.0, float(np.pi)))),
    )
    return rig, np.array(d.get("keypoints", []), dtype=np.int64)


def load_mesh(path, rig_path=None) -> TriMesh:
    """Load an OBJ (v/vt/f) and, if present, its ``.rig.json`` sidecar."""
    path = Path(path)
    verts, faces, face_uvs = _parse_obj(path)
    if rig_path is None:
        candidate = path.with_suffix(".rig.json")
        rig_path = candidate if candidate.exists() else None
    rig, keypoints, charts = None, np.zeros(0, dtype=np.int64), {}
    if rig_path is not None:
        d = json.loads(Path(rig_path).read_text())
        rig, keypoints = rig_from_dict(d, len(verts))
        charts = d.get("charts", {})
    mesh = TriMesh(verts, faces, face_uvs, rig, keypoints, charts)
    mesh.validate()
    return mesh


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_asset(directory, name: str, mesh: TriMesh) -> dict:
    """Write ``<name>.obj``, ``<name>.rig.json`` and ``<name>.manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    obj = directory / f"{name}.obj"
    rig = directory / f"{name}.rig.json"
    write_obj(obj, mesh)
    d = rig_to_dict(mesh.rig, mesh.keypoint_vertex_ids)
    d["charts"] = mesh.charts
    rig.write_text(json.dumps(d, indent=1) + "\n")
    manifest = {
        "name": name,
        "vertices": mesh.num_vertices,
        "faces": mesh.num_faces,
        "joints": mesh.rig.num_joints,
        "keypoints": len(mesh.keypoint_vertex_ids),
        "files": {obj.name: file_sha256(obj), rig.name: file_sha256(rig)},
    }
    (directory / f"{name}.manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest
