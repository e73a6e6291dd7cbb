"""Meshes, rig, cameras and rasterization."""
from texhand.geom.camera import Camera, project
from texhand.geom.handasset import build_toy_hand, toy_hand
from texhand.geom.mesh import MeshError, Rig, TriMesh, load_mesh, write_asset, write_obj
from texhand.geom.raster import (
    DEFAULT_BACKEND,
    FragmentBuffer,
    RasterFragment,
    rasterize,
    visible_vertices_bruteforce,
    visible_vertices_from_raster,
)
from texhand.geom.rig import PoseParams, apply_pose, keypoints_3d, rodrigues
