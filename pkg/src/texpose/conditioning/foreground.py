"""Reference-image foreground features and the mask gating that bounds them.

The reference branch reuses the denoiser architecture on the clean
foreground latent and collects the token maps its self-attention sites
emit. Convolution padding and attention both smear energy past the
silhouette (visible in the unmasked statistics), so each layer's features
are gated by the reference mask downsampled to that layer's grid.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn
from torch.nn import functional as F


@dataclass
class ForegroundFeatureSet:
    """Per-layer reference tokens plus matching binary masks.

    features[l] is (B, h_l*w_l, c_l); masks[l] is (B, 1, h_l, w_l) with
    0/1 entries. Layers are ordered finest first and halve per level.
    """

    features: tuple
    masks: tuple

    def __post_init__(self):
        self.features = tuple(self.features)
        self.masks = tuple(self.masks)
        if len(self.features) != len(self.masks):
            raise ValueError(f"{len(self.features)} feature layers but {len(self.masks)} masks")
        if not self.features:
            raise ValueError("feature set must have at least one layer")
        prev = None
        for level, (feat, mask) in enumerate(zip(self.features, self.masks)):
            if feat.ndim != 3:
                raise ValueError(f"layer {level}: features must be (B, tokens, channels)")
            if mask.ndim != 4 or mask.shape[1] != 1:
                raise ValueError(f"layer {level}: mask must be (B, 1, h, w)")
            h, w = mask.shape[-2:]
            if feat.shape[1] != h * w:
                raise ValueError(f"layer {level}: {feat.shape[1]} tokens but mask grid {h}x{w}")
            if prev is not None and (h * 2, w * 2) != prev:
                raise ValueError(f"layer {level}: grid {h}x{w} does not halve previous {prev}")
            prev = (h, w)

    @property
    def num_layers(self) -> int:
        return len(self.features)


def downsample_mask(mask: torch.Tensor, size: tuple) -> torch.Tensor:
    """Nearest-neighbor downsample then re-binarize at 0.5."""
    if mask.ndim != 4 or mask.shape[1] != 1:
        raise ValueError(f"mask must be (B, 1, H, W), got {tuple(mask.shape)}")
    small = F.interpolate(mask.float(), size=size, mode="nearest")
    return (small >= 0.5).to(mask.dtype if mask.is_floating_point() else torch.float32)


def apply_mask(features: ForegroundFeatureSet) -> ForegroundFeatureSet:
    """Gate every layer elementwise; outside-mask features become exactly 0."""
    gated = []
    for feat, mask in zip(features.features, features.masks):
        flat = mask.flatten(2).transpose(1, 2).to(feat.dtype)
        gated.append(feat * flat)
    return ForegroundFeatureSet(features=tuple(gated), masks=features.masks)


class ForegroundEncoder(nn.Module):
    """Reference branch: a structural twin of the denoiser on clean input."""

    def __init__(self, reference_net):
        super().__init__()
        self.net = reference_net

    def forward(self, fg_latent: torch.Tensor, mask: torch.Tensor) -> ForegroundFeatureSet:
        """fg_latent: (B, c, h, w) codec encoding of the masked reference
        image; mask: (B, 1, H, W) binary silhouette at pixel resolution.
        """
        if mask.ndim != 4 or mask.shape[1] != 1:
            raise ValueError(f"mask must be (B, 1, H, W), got {tuple(mask.shape)}")
        if mask.shape[0] != fg_latent.shape[0]:
            raise ValueError(
                f"mask batch {mask.shape[0]} != latent batch {fg_latent.shape[0]}"
            )
        bad = torch.logical_and(mask != 0, mask != 1)
        if bool(bad.any()):
            raise ValueError("mask must be binary (0/1)")
        token_maps = self.net.reference_features(fg_latent)
        masks = []
        side_h, side_w = fg_latent.shape[-2:]
        for tokens in token_maps:
            count = tokens.shape[1]
            while side_h * side_w > count:
                side_h, side_w = side_h // 2, side_w // 2
            if side_h * side_w != count:
                raise ValueError(f"token count {count} does not fit grid {side_h}x{side_w}")
            masks.append(downsample_mask(mask, (side_h, side_w)))
        return ForegroundFeatureSet(features=tuple(token_maps), masks=tuple(masks))


def feature_mask_stats(features: ForegroundFeatureSet) -> list:
    """Per-layer min/max and inside/outside-mask energy, for debug dumps."""
    records = []
    for level, (feat, mask) in enumerate(zip(features.features, features.masks)):
        flat = mask.flatten(2).transpose(1, 2).to(feat.dtype)
        inside = feat * flat
        outside = feat * (1.0 - flat)
        records.append(
            {
                "layer": level,
                "grid": list(mask.shape[-2:]),
                "min": float(feat.min()),
                "max": float(feat.max()),
                "energy_inside": float((inside**2).sum()),
                "energy_outside": float((outside**2).sum()),
            }
        )
    return records


def write_feature_stats(features: ForegroundFeatureSet, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for record in feature_mask_stats(features):
            fh.write(json.dumps(record) + "\n")
