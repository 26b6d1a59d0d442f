"""Synthetic corpus generation, manifests, and training batches."""

from texpose.dataio.humanoid import build_humanoid
from texpose.dataio.records import (
    ClipRecord,
    TrainingBatch,
    generate_synthetic_clip,
    load_clip,
    make_batch,
    quantize,
    render_record_pose_maps,
)
from texpose.dataio.synthetic import (
    BACKGROUND_KINDS,
    CAMERA_KINDS,
    SyntheticSceneSpec,
    camera_path,
    make_identity_texture,
    make_plate,
    motion_states,
    orbit_camera_at,
    plate_sequence,
)

__all__ = [
    "BACKGROUND_KINDS",
    "CAMERA_KINDS",
    "ClipRecord",
    "SyntheticSceneSpec",
    "TrainingBatch",
    "build_humanoid",
    "camera_path",
    "generate_synthetic_clip",
    "load_clip",
    "make_batch",
    "make_identity_texture",
    "make_plate",
    "motion_states",
    "orbit_camera_at",
    "plate_sequence",
    "quantize",
    "render_record_pose_maps",
]
