"""Two-phase training orchestration and windowed synthesis."""

from texpose.pipeline.inference import (
    InferenceJob,
    aggregate_windows,
    composite_preview,
    job_hash,
    synthesize,
    window_starts,
)
from texpose.pipeline.models import (
    CHECKPOINT_KIND,
    PHASE_TRAINABLE,
    ModelSet,
    apply_freeze_plan,
    build_models,
    group_checksums,
    load_models,
    parameter_groups,
    save_models,
)
from texpose.pipeline.training import TrainConfig, TrainResult, train

__all__ = [
    "CHECKPOINT_KIND",
    "PHASE_TRAINABLE",
    "InferenceJob",
    "ModelSet",
    "TrainConfig",
    "TrainResult",
    "aggregate_windows",
    "apply_freeze_plan",
    "build_models",
    "composite_preview",
    "group_checksums",
    "job_hash",
    "load_models",
    "parameter_groups",
    "save_models",
    "synthesize",
    "train",
    "window_starts",
]
