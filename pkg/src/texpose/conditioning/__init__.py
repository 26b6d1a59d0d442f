"""Control pathways: pose, foreground, background, identity, fused attention."""

from texpose.conditioning.attention import AttentionProjections, fused_cross_attention
from texpose.conditioning.bundle import ConditioningBundle
from texpose.conditioning.encoders import (
    BackgroundEncoder,
    IdentityEmbedder,
    PoseExtractor,
)
from texpose.conditioning.foreground import (
    ForegroundEncoder,
    ForegroundFeatureSet,
    apply_mask,
    downsample_mask,
    feature_mask_stats,
    write_feature_stats,
)

__all__ = [
    "AttentionProjections",
    "fused_cross_attention",
    "ConditioningBundle",
    "PoseExtractor",
    "BackgroundEncoder",
    "IdentityEmbedder",
    "ForegroundEncoder",
    "ForegroundFeatureSet",
    "apply_mask",
    "downsample_mask",
    "feature_mask_stats",
    "write_feature_stats",
]
