import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texhand.diffcore import Tensor, grad_check, precision
from texhand.geom import (
    Camera, MeshError, PoseParams, apply_pose, keypoints_3d, load_mesh, project, rasterize, toy_hand,
    visible_vertices_bruteforce, visible_vertices_from_raster,
)
from texhand.geom.handasset import asset_dir
from texhand.geom.mesh import file_sha256
from texhand.geom.raster import BACKENDS, DEFAULT_BACKEND
from texhand.geom.rig import axis_angle_matrix, rodrigues

QUAD = """v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
vt 0 0
vt 1 0
vt 1 1
vt 0 1
f 1/1 2/2 3/3
f 1/1 3/3 4/4
"""


def screen_camera(w=32, h=32):
    """Identity camera with unit-ish focal so world x/y map linearly to pixels at z=1."""
    return Camera(1.0, 1.0, 0.0, 0.0, np.eye(3), [0.0, 0.0, 0.0])


def _tri_at_depth(pix, z):
    """World vertices that project to pixel coordinates ``pix`` under screen_camera at depth z."""
    pix = np.asarray(pix, dtype=float)
    return np.column_stack([pix[:, 0] * z, pix[:, 1] * z, np.full(len(pix), z)])


# -- mesh IO ------------------------------------------------------------------------

def test_load_quad(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text(QUAD)
    m = load_mesh(p)
    assert (m.num_vertices, m.num_faces) == (4, 2)
    np.testing.assert_array_equal(m.face_uvs[1, 1], [1, 1])


def test_load_bad_uv_index(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text(QUAD.replace("f 1/1 3/3 4/4", "f 1/1 3/99 4/4"))
    with pytest.raises(MeshError):
        load_mesh(p)


def test_load_missing_uvs(tmp_path):
    p = tmp_path / "nouv.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    with pytest.raises(MeshError):
        load_mesh(p)


def test_degenerate_face_warns(tmp_path):
    p = tmp_path / "deg.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 2 0 0\nvt 0 0\nvt 1 0\nvt 1 1\nf 1/1 2/2 3/3\n")
    with pytest.warns(RuntimeWarning, match="degenerate"):
        m = load_mesh(p)
    assert m.num_faces == 1


def test_asset_matches_manifest():
    d = asset_dir()
    manifest = json.loads((d / "toy_hand.manifest.json").read_text())
    m = toy_hand()
    assert m.num_vertices == manifest["vertices"]
    assert m.num_faces == manifest["faces"]
    assert m.rig.num_joints == manifest["joints"]
    assert len(m.keypoint_vertex_ids) == manifest["keypoints"]
    for name, digest in manifest["files"].items():
        assert file_sha256(d / name) == digest


def test_asset_invariants():
    m = toy_hand()
    m.validate()
    assert m.faces.max() < m.num_vertices
    assert m.face_uvs.min() >= 0 and m.face_uvs.max() <= 1
    np.testing.assert_allclose(m.rig.weights.sum(1), 1.0, atol=1e-6)
    assert m.rig.weights.min() >= 0
    assert len(set(m.keypoint_vertex_ids.tolist())) == len(m.keypoint_vertex_ids)
    assert PoseParams().dof == 11


# -- pose -----------------------------------------------------------------------------

def test_identity_pose():
    m = toy_hand()
    np.testing.assert_allclose(apply_pose(m, PoseParams()), m.vertices, atol=1e-12)


def test_translation_only():
    m = toy_hand()
    t = np.array([1.5, -2.0, 0.25])
    np.testing.assert_allclose(apply_pose(m, PoseParams(translation=t)), m.vertices + t, atol=1e-12)


@pytest.mark.parametrize("finger", range(5))
def test_curl_matches_two_link_fk(finger):
    m = toy_hand()
    rig = m.rig
    prox, dist = 1 + 2 * finger, 2 + 2 * finger
    tip = m.keypoint_vertex_ids[3 * finger + 3]
    assert rig.weights[tip, dist] == 1.0
    curls = np.zeros(5)
    curls[finger] = np.pi / 2
    got = keypoints_3d(m, apply_pose(m, PoseParams(curls=curls)))[3 * finger + 3]
    # both joints of the finger rotate by the curl about their own axis
    r1 = axis_angle_matrix(rig.axes[prox], np.pi / 2)
    r2 = axis_angle_matrix(rig.axes[dist], np.pi / 2)
    base, mid, p = rig.rest[prox], rig.rest[dist], m.vertices[tip]
    mid_posed = base + r1 @ (mid - base)
    expect = mid_posed + r1 @ r2 @ (p - mid)
    np.testing.assert_allclose(got, expect, atol=1e-9)


def test_rodrigues_small_angle_and_orthonormal():
    np.testing.assert_allclose(rodrigues(np.zeros(3)), np.eye(3))
    r = rodrigues(np.array([0.3, -1.1, 0.7]))
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_apply_pose_tensor_matches_numpy(rng):
    m = toy_hand()
    vec = np.concatenate([rng.normal(0, .4, 3), rng.normal(0, 1, 3), rng.uniform(0, 1.2, 5)])
    a = apply_pose(m, PoseParams.from_vector(vec))
    with precision("f64"):
        b = apply_pose(m, Tensor(vec)).data
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_apply_pose_grad_check():
    m = toy_hand()
    rng = np.random.default_rng(7)
    vec = np.concatenate([rng.normal(0, .4, 3), rng.normal(0, 1, 3), rng.uniform(.2, 1.2, 5)])
    rep = grad_check(lambda v: apply_pose(m, v), [vec])
    assert rep.passed, rep.line()


def test_pose_validate_rejects_out_of_limit():
    with pytest.raises(ValueError):
        PoseParams(curls=[0, 0, 4.0, 0, 0]).validate()


# -- camera / projection --------------------------------------------------------------

def test_project_examples():
    cam = Camera(100.0, 100.0, 50.0, 50.0)
    pix, valid = project(np.array([[0, 0, 2.0], [1, 1, 2.0], [0, 0, 0.05]]), cam)
    np.testing.assert_allclose(pix[:2], [[50, 50], [100, 100]])
    assert valid.tolist() == [True, True, False]


def test_camera_rejects_bad_rotation():
    with pytest.raises(ValueError):
        Camera(1, 1, 0, 0, np.diag([1.0, 2.0, 1.0]))
    with pytest.raises(ValueError):
        Camera(0, 1, 0, 0)


def test_camera_roundtrip_dict():
    cam = Camera.looking_at_origin(45, 250, 128, 128)
    back = Camera.from_dict(json.loads(json.dumps(cam.to_dict())))
    np.testing.assert_array_equal(back.rotation, cam.rotation)
    assert back.fx == cam.fx and back.cy == cam.cy


def test_weak_perspective_scale():
    cam = Camera.weak_perspective(0.5, 0.0, 0.0, 100, 100)
    pix, _ = project(np.array([[0, 0, 0.0], [1, 0, 0.0]]), cam)
    # unit length spans scale·size/2 pixels
    assert pix[1, 0] - pix[0, 0] == pytest.approx(0.5 * 100 / 2, rel=1e-3)


# -- rasterizer -------------------------------------------------------------------------

def _half_space_coverage(tri_pix, w, h):
    """Per-pixel point-in-triangle oracle at pixel centres."""
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    a, b, c = tri_pix

    def edge(p, q):
        return (q[0] - p[0]) * (ys - p[1]) - (q[1] - p[1]) * (xs - p[0])

    e = np.stack([edge(a, b), edge(b, c), edge(c, a)])
    return np.all(e <= 0, axis=0) | np.all(e >= 0, axis=0)


def _front(tri_pix):
    """Order corners so the projected signed area is negative (front-facing)."""
    a, b, c = np.asarray(tri_pix, float)
    area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return np.array([a, b, c]) if area < 0 else np.array([a, c, b])


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_single_triangle_matches_half_space_oracle(backend):
    rng = np.random.default_rng(0)
    for _ in range(10):
        tri = _front(rng.uniform(1, 31, (3, 2)))
        verts = _tri_at_depth(tri, 2.0)
        frags = rasterize(verts, np.array([[0, 1, 2]]), np.zeros((1, 3, 2)), screen_camera(), 32, 32, backend)
        oracle = _half_space_coverage(tri, 32, 32)
        # pixels exactly on an edge may go either way; random corners make that measure-zero
        np.testing.assert_array_equal(frags.coverage, oracle)


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_back_facing_gives_zero_coverage(backend):
    tri = _front([[2, 2], [30, 4], [10, 28]])[::-1]
    verts = _tri_at_depth(tri, 2.0)
    frags = rasterize(verts, np.array([[0, 1, 2]]), np.zeros((1, 3, 2)), screen_camera(), 32, 32, backend)
    assert not frags.coverage.any()


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_nearer_triangle_wins(backend):
    tri = _front([[2, 2], [30, 4], [10, 28]])
    verts = np.vstack([_tri_at_depth(tri, 3.0), _tri_at_depth(tri + [2, 1], 2.0)])
    faces = np.array([[0, 1, 2], [3, 4, 5]])
    frags = rasterize(verts, faces, np.zeros((2, 3, 2)), screen_camera(), 32, 32, backend)
    both = _half_space_coverage(tri, 32, 32) & _half_space_coverage(tri + [2, 1], 32, 32)
    assert both.sum() > 50
    assert np.all(frags.face_id[both] == 1)


def test_behind_near_plane_dropped():
    tri = _front([[2, 2], [30, 4], [10, 28]])
    verts = _tri_at_depth(tri, 2.0)
    verts[0, 2] = 0.05
    frags = rasterize(verts, np.array([[0, 1, 2]]), np.zeros((1, 3, 2)), screen_camera(), 32, 32)
    assert not frags.coverage.any()


def _hand_scene(seed=0, size=128):
    rng = np.random.default_rng(seed)
    m = toy_hand()
    pose = PoseParams(rng.normal(0, .4, 3), [0, -3, 0], rng.uniform(0, 1.2, 5))
    cam = Camera.looking_at_origin(45.0, 250.0 * size / 128, size, size)
    return m, apply_pose(m, pose), cam


def test_backends_agree_bit_exactly():
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    m, v, cam = _hand_scene(3)
    a = rasterize(v, m.faces, m.face_uvs, cam, 128, 128, "python")
    b = rasterize(v, m.faces, m.face_uvs, cam, 128, 128, "compiled")
    assert a.equals(b)


def test_rasterize_deterministic():
    m, v, cam = _hand_scene(1)
    assert rasterize(v, m.faces, m.face_uvs, cam, 128, 128).equals(rasterize(v, m.faces, m.face_uvs, cam, 128, 128))


def test_fragment_invariants_and_reprojection():
    m, v, cam = _hand_scene(2)
    frags = rasterize(v, m.faces, m.face_uvs, cam, 128, 128)
    assert frags.coverage.sum() > 1000
    worst = 0.0
    for f in frags.fragments():
        assert f.barycentrics.min() >= -1e-9
        assert f.barycentrics.sum() == pytest.approx(1.0, abs=1e-6)
        assert f.depth > cam.near
        p3 = f.barycentrics @ v[m.faces[f.face]]
        pix, _ = project(p3[None], cam)
        worst = max(worst, np.abs(pix[0] - (f.pixel[1] + .5, f.pixel[0] + .5)).max())
    assert worst < 0.75


def test_fragment_uv_is_barycentric_interpolation():
    m, v, cam = _hand_scene(4)
    frags = rasterize(v, m.faces, m.face_uvs, cam, 128, 128)
    r, c = np.argwhere(frags.coverage)[100]
    f = frags.face_id[r, c]
    np.testing.assert_allclose(frags.uv[r, c], frags.bary[r, c] @ m.face_uvs[f], atol=1e-12)


def test_visibility_lone_triangle_and_occluder():
    cam = screen_camera()
    verts = _tri_at_depth(_front([[2, 2], [30, 4], [10, 28]]), 2.0)
    assert visible_vertices_bruteforce(verts, np.array([[0, 1, 2]]), cam).all()
    big = _tri_at_depth(_front([[-50, -50], [80, -40], [0, 90]]), 1.0)
    allv = np.vstack([verts, big])
    vis = visible_vertices_bruteforce(allv, np.array([[0, 1, 2], [3, 4, 5]]), cam)
    assert vis.tolist() == [False, False, False, True, True, True]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_visibility_raster_agrees_with_bruteforce(seed):
    # the raster-derived check needs pixels finer than the triangles to be sharp
    m, v, cam = _hand_scene(seed, size=1024)
    frags = rasterize(v, m.faces, m.face_uvs, cam, 1024, 1024)
    a = visible_vertices_from_raster(v, m.faces, frags, cam)
    b = visible_vertices_bruteforce(v, m.faces, cam)
    assert np.mean(a == b) >= 0.99


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_projection_translation_property(dx, dy):
    """Translating points parallel to the image plane shifts pixels by f·d/z."""
    cam = Camera(80.0, 80.0, 40.0, 40.0)
    p = np.array([[0.3, -0.2, 30.0]])
    q = p + [dx, dy, 0.0]
    a, _ = project(p, cam)
    b, _ = project(q, cam)
    np.testing.assert_allclose(b - a, [[80 * dx / 30, 80 * dy / 30]], atol=1e-9)
