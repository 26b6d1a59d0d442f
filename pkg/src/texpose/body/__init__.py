"""Textured articulated body: skinning, UV textures, pose-map rasterization."""

from texpose.body.camera import CameraPose, load_trajectory, look_at, save_trajectory
from texpose.body.mesh import (
    BodyMesh,
    BodyModelState,
    load_mesh,
    pose_mesh,
    rotation_from_axis_angle,
    save_mesh,
)
from texpose.body.raster import PoseMap, rasterize, render_pose_map, render_sequence
from texpose.body.texture import (
    CompletionMethod,
    NearestValidFill,
    SurfaceCorrespondence,
    UVTextureMap,
    complete_texture,
    extract_partial_texture,
    texel_index,
)

__all__ = [
    "BodyMesh",
    "BodyModelState",
    "CameraPose",
    "CompletionMethod",
    "NearestValidFill",
    "PoseMap",
    "SurfaceCorrespondence",
    "UVTextureMap",
    "complete_texture",
    "extract_partial_texture",
    "load_mesh",
    "load_trajectory",
    "look_at",
    "pose_mesh",
    "rasterize",
    "render_pose_map",
    "render_sequence",
    "rotation_from_axis_angle",
    "save_mesh",
    "save_trajectory",
    "texel_index",
]
