"""Model bundle, parameter-group ledger, and checkpoint plumbing.

The full trainable state lives in one ModelSet: the denoising network, its
appearance clone feeding the foreground pathway, the three conditioning
encoders, and the frozen image codec. Training phases are defined purely
in terms of named parameter groups so freeze contracts can be audited by
checksum.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from texpose.checkpoint import CheckpointError, array_checksum, load_checkpoint, save_checkpoint
from texpose.codec import LatentCodec
from texpose.conditioning import (
    BackgroundEncoder,
    ForegroundEncoder,
    IdentityEmbedder,
    PoseExtractor,
)
from texpose.diffusion import DenoiserUNet, NoiseSchedule, make_schedule

CHECKPOINT_KIND = "synthesis_models"

PHASE_TRAINABLE: dict[int, tuple[str, ...]] = {
    1: (
        "pose_extractor",
        "foreground_spatial_attention",
        "denoiser_cross_attention",
        "background_encoder",
    ),
    2: ("denoiser_temporal_attention",),
}


@dataclass
class ModelSet:
    """Every module the training and inference paths touch."""

    schedule: NoiseSchedule
    codec: LatentCodec
    denoiser: DenoiserUNet
    fg_encoder: ForegroundEncoder
    pose_extractor: PoseExtractor
    bg_encoder: BackgroundEncoder
    identity_embedder: IdentityEmbedder

    def modules(self) -> dict[str, nn.Module]:
        return {
            "codec": self.codec,
            "denoiser": self.denoiser,
            "fg_encoder": self.fg_encoder,
            "pose_extractor": self.pose_extractor,
            "bg_encoder": self.bg_encoder,
            "identity_embedder": self.identity_embedder,
        }


def build_models(
    codec: LatentCodec,
    seed: int = 0,
    schedule_kind: str = "linear-beta",
    diffusion_steps: int = 1000,
) -> ModelSet:
    """Construct the full model bundle with seeded initialization.

    The codec must already be trained and frozen; everything else is built
    fresh. The foreground encoder wraps an independent copy of the denoiser
    so the two can diverge during training.
    """
    if not codec.frozen:
        raise ValueError("codec must be frozen before building the model bundle")
    torch.manual_seed(seed)
    schedule = make_schedule(schedule_kind, diffusion_steps)
    denoiser = DenoiserUNet(schedule)
    fg_encoder = ForegroundEncoder(copy.deepcopy(denoiser))
    pose_extractor = PoseExtractor()
    bg_encoder = BackgroundEncoder(latent_channels=codec.latent_channels)
    identity_embedder = IdentityEmbedder(embed_dim=denoiser.identity_dim)
    return ModelSet(
        schedule=schedule,
        codec=codec,
        denoiser=denoiser,
        fg_encoder=fg_encoder,
        pose_extractor=pose_extractor,
        bg_encoder=bg_encoder,
        identity_embedder=identity_embedder,
    )


def parameter_groups(models: ModelSet) -> dict[str, dict[str, nn.Parameter]]:
    """Partition every parameter into one named group.

    Denoiser groups keep their internal split (fusion, convs, spatial and
    cross and temporal attention). The clone inside the foreground encoder
    contributes its spatial-attention layers as a trainable group and the
    remainder as a permanently frozen trunk.
    """
    groups: dict[str, dict[str, nn.Parameter]] = {}

    for group, params in models.denoiser.parameter_groups().items():
        groups[f"denoiser_{group}"] = {f"denoiser.{n}": p for n, p in params.items()}

    fg_groups = models.fg_encoder.net.parameter_groups()
    groups["foreground_spatial_attention"] = {
        f"fg_encoder.net.{n}": p for n, p in fg_groups.pop("spatial_self_attention").items()
    }
    trunk: dict[str, nn.Parameter] = {}
    for params in fg_groups.values():
        trunk.update({f"fg_encoder.net.{n}": p for n, p in params.items()})
    groups["foreground_trunk"] = trunk

    groups["pose_extractor"] = {
        f"pose_extractor.{n}": p for n, p in models.pose_extractor.named_parameters()
    }
    groups["background_encoder"] = {
        f"bg_encoder.{n}": p for n, p in models.bg_encoder.named_parameters()
    }
    groups["identity_embedder"] = {
        f"identity_embedder.{n}": p for n, p in models.identity_embedder.named_parameters()
    }
    groups["codec"] = {f"codec.{n}": p for n, p in models.codec.named_parameters()}
    return groups


def group_checksums(models: ModelSet) -> dict[str, str]:
    """Checksum of each parameter group, for the freeze ledger."""
    return {
        name: array_checksum({n: p.detach().cpu().numpy() for n, p in params.items()})
        for name, params in parameter_groups(models).items()
    }


def apply_freeze_plan(models: ModelSet, phase: int) -> list[nn.Parameter]:
    """Mark exactly the phase's groups trainable; return their parameters.

    Phase 1 trains the pose extractor, the clone's spatial attention, the
    denoiser's cross attention, and the background encoder. Phase 2 trains
    only the denoiser's temporal attention. Everything else is frozen.
    """
    if phase not in PHASE_TRAINABLE:
        raise ValueError(f"phase must be 1 or 2, got {phase}")
    trainable_groups = set(PHASE_TRAINABLE[phase])
    trainable: list[nn.Parameter] = []
    for name, params in parameter_groups(models).items():
        flag = name in trainable_groups
        for param in params.values():
            param.requires_grad_(flag)
        if flag:
            trainable.extend(params.values())
    return trainable


def _state_arrays(models: ModelSet) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for prefix, module in models.modules().items():
        for key, tensor in module.state_dict().items():
            arrays[f"{prefix}.{key}"] = tensor.detach().cpu().numpy()
    return arrays


def save_models(path: str | Path, models: ModelSet, metadata: dict | None = None) -> None:
    """Write every module's state plus rebuild metadata to one container."""
    meta = dict(metadata or {})
    meta.update(
        {
            "kind": CHECKPOINT_KIND,
            "schedule_kind": models.schedule.kind,
            "diffusion_steps": models.schedule.num_steps,
            "codec": {
                "scale_factor": models.codec.scale_factor,
                "latent_channels": models.codec.latent_channels,
                "base_width": models.codec.base_width,
            },
        }
    )
    save_checkpoint(path, _state_arrays(models), meta)


def load_models(path: str | Path) -> tuple[ModelSet, dict]:
    """Rebuild a ModelSet from a container written by save_models."""
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: checkpoint kind {meta.get('kind')!r} is not a model bundle")
    codec_cfg = meta["codec"]
    codec = LatentCodec(
        scale_factor=int(codec_cfg["scale_factor"]),
        latent_channels=int(codec_cfg["latent_channels"]),
        base_width=int(codec_cfg["base_width"]),
    )
    codec.freeze()
    models = build_models(
        codec,
        schedule_kind=meta["schedule_kind"],
        diffusion_steps=int(meta["diffusion_steps"]),
    )
    for prefix, module in models.modules().items():
        state = {
            key[len(prefix) + 1 :]: torch.from_numpy(arr.copy())
            for key, arr in arrays.items()
            if key.startswith(f"{prefix}.")
        }
        module.load_state_dict(state, strict=True)
    return models, meta
