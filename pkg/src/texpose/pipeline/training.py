"""Two-phase trainer with an auditable freeze plan.

Phase 1 fits the spatial pathways (pose extractor, clone spatial attention,
denoiser cross attention, background encoder) with temporal layers disabled.
Phase 2 starts from a phase-1 checkpoint and fits only the temporal layers.
Every step appends a log record carrying the loss and the current checksum
of every parameter group, so freeze violations are detectable after the
fact from the log alone.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from texpose.checkpoint import CheckpointError, load_checkpoint
from texpose.conditioning import ConditioningBundle, apply_mask
from texpose.dataio import ClipRecord, render_record_pose_maps
from texpose.diffusion import DiffusionBatch, training_loss
from texpose.pipeline.models import (
    CHECKPOINT_KIND,
    ModelSet,
    group_checksums,
    apply_freeze_plan,
    save_models,
)
from texpose import pngio

log = logging.getLogger(__name__)

LOG_NAME = "train_log.jsonl"


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one training run; one instance covers one phase."""

    phase: int
    steps: int
    batch_size: int = 1
    lr: float = 1e-3
    window: int = 8
    seed: int = 0
    lam: float = 1.0
    flip_probability: float = 0.0
    lr_final: float | None = None
    checkpoint_interval: int = 500
    init_checkpoint: Path | None = None

    def __post_init__(self) -> None:
        if self.phase not in (1, 2):
            raise ValueError(f"phase must be 1 or 2, got {self.phase}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")
        if self.lr_final is not None and not 0 < self.lr_final <= self.lr:
            raise ValueError(f"lr_final must lie in (0, lr], got {self.lr_final}")
        if self.checkpoint_interval < 1:
            raise ValueError(f"checkpoint_interval must be >= 1, got {self.checkpoint_interval}")

    def lr_at(self, step: int) -> float:
        """Cosine-decayed learning rate for the given step (constant if
        lr_final is unset)."""
        if self.lr_final is None or self.steps <= 1:
            return self.lr
        frac = step / (self.steps - 1)
        return self.lr_final + (self.lr - self.lr_final) * 0.5 * (1 + np.cos(np.pi * frac))


@dataclass
class TrainResult:
    models: ModelSet
    losses: list[float]
    log_path: Path
    checkpoint_path: Path


def _load_chw(path: Path) -> np.ndarray:
    img = pngio.load_image(path)
    if img.ndim == 2:
        img = img[..., None]
    return np.moveaxis(img[..., :3], -1, 0)


class _ClipTensors:
    """One clip fully materialized in memory, pose maps included.

    Clip assets are immutable during a run, so frames are decoded and pose
    maps rendered exactly once. Latents depend only on the frozen codec and
    the flip state, so they are cached per flip on first use.
    """

    def __init__(self, record: ClipRecord):
        frames = np.stack([_load_chw(p) for p in record.frame_paths])
        masks = np.stack([pngio.load_mask(p)[None] for p in record.mask_paths])
        plates = np.stack([_load_chw(p) for p in record.plate_paths])
        pose_maps = render_record_pose_maps(record, 0, len(record))
        self.frames = torch.from_numpy(frames.astype(np.float32))
        self.masks = torch.from_numpy(masks.astype(np.float32))
        self.plates = torch.from_numpy(plates.astype(np.float32))
        self.pose_maps = torch.from_numpy(pose_maps.astype(np.float32))
        self._latents: dict[bool, torch.Tensor] = {}
        self._refs: dict[bool, tuple[torch.Tensor, torch.Tensor, torch.Tensor]] = {}

    def __len__(self) -> int:
        return self.frames.shape[0]

    def view(self, tensor: torch.Tensor, flip: bool) -> torch.Tensor:
        return torch.flip(tensor, dims=[-1]) if flip else tensor

    def latents(self, models: ModelSet, flip: bool) -> torch.Tensor:
        if flip not in self._latents:
            with torch.no_grad():
                self._latents[flip] = models.codec.encode(self.view(self.frames, flip))
        return self._latents[flip]

    def reference(self, models: ModelSet, flip: bool):
        """(masked reference latent, reference mask, identity tokens)."""
        if flip not in self._refs:
            ref = self.view(self.frames[0] * self.masks[0], flip)[None]
            ref_mask = self.view(self.masks[0], flip)[None]
            with torch.no_grad():
                latent = models.codec.encode(ref)
                identity = models.identity_embedder(ref)
            self._refs[flip] = (latent, ref_mask, identity)
        return self._refs[flip]


def _stratified_timesteps(num_steps: int, batch_size: int, gen: torch.Generator) -> torch.Tensor:
    """One uniform timestep per equal stratum of [1, T].

    The marginal distribution stays uniform, but every batch is guaranteed
    spread across the timestep range, which cuts gradient variance when
    the per-timestep loss scale varies strongly. Reduces to a plain
    uniform draw at batch size 1.
    """
    edges = np.floor(np.linspace(0, num_steps, batch_size + 1)).astype(np.int64)
    u = torch.rand(batch_size, generator=gen, dtype=torch.float64)
    widths = torch.from_numpy(edges[1:] - edges[:-1]).to(torch.float64)
    return (torch.from_numpy(edges[:-1]) + (u * widths).long() + 1).long()


def _batch_loss(
    models: ModelSet,
    clips: list[_ClipTensors],
    config: TrainConfig,
    rng: np.random.Generator,
    gen: torch.Generator,
) -> torch.Tensor:
    """Sample a window batch and return the denoising loss on it."""
    z0_parts, pose_parts, plate_parts, ref_latents, ref_masks, identities = [], [], [], [], [], []
    for _ in range(config.batch_size):
        clip = clips[int(rng.integers(len(clips)))]
        start = int(rng.integers(len(clip) - config.window + 1))
        flip = bool(rng.random() < config.flip_probability)
        window = slice(start, start + config.window)
        z0_parts.append(clip.latents(models, flip)[window])
        pose_parts.append(clip.view(clip.pose_maps[window], flip))
        plate_parts.append(clip.view(clip.plates[window], flip))
        latent, mask, identity = clip.reference(models, flip)
        ref_latents.append(latent)
        ref_masks.append(mask)
        identities.append(identity)

    bsz, window = config.batch_size, config.window
    z0 = torch.stack(z0_parts)
    pose_latent = models.pose_extractor(torch.cat(pose_parts)).reshape(
        bsz, window, *z0.shape[2:]
    )
    bg_latents = models.bg_encoder.encode_frames(torch.cat(plate_parts), models.codec).reshape(
        bsz, window, *z0.shape[2:]
    )
    fg = apply_mask(models.fg_encoder(torch.cat(ref_latents), torch.cat(ref_masks)))
    bundle = ConditioningBundle(
        pose_latent=pose_latent,
        fg=fg,
        bg_latents=bg_latents,
        identity=torch.cat(identities),
        lam=config.lam,
    )
    t = _stratified_timesteps(models.schedule.num_steps, bsz, gen)
    eps = torch.randn(z0.shape, generator=gen)
    batch = DiffusionBatch(z0=z0, t=t, eps=eps, bundle=bundle)
    return training_loss(batch, models.denoiser, models.schedule,
                         temporal_enabled=config.phase == 2)


def _restore_from_checkpoint(models: ModelSet, path: Path) -> dict:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: checkpoint kind {meta.get('kind')!r} is not a model bundle")
    for prefix, module in models.modules().items():
        state = {
            key[len(prefix) + 1 :]: torch.from_numpy(arr.copy())
            for key, arr in arrays.items()
            if key.startswith(f"{prefix}.")
        }
        module.load_state_dict(state, strict=True)
    return meta


def train(
    config: TrainConfig,
    records: list[ClipRecord],
    models: ModelSet,
    out_dir: str | Path,
    metadata: dict | None = None,
) -> TrainResult:
    """Run one training phase over the given clips.

    Phase 2 refuses to start without a phase-1 checkpoint; loading one
    replaces the state of every module in ``models``. Checkpoints land in
    ``out_dir`` every ``checkpoint_interval`` steps and once at the end.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not models.codec.frozen:
        raise ValueError("codec must be frozen before diffusion training")

    if config.phase == 2:
        if config.init_checkpoint is None:
            raise ValueError("phase 2 requires a phase-1 checkpoint (init_checkpoint is unset)")
        meta = _restore_from_checkpoint(models, Path(config.init_checkpoint))
        if meta.get("phase") != 1:
            raise ValueError(
                f"phase 2 requires a phase-1 checkpoint, got phase {meta.get('phase')!r}"
            )
    elif config.init_checkpoint is not None:
        _restore_from_checkpoint(models, Path(config.init_checkpoint))

    eligible = [r for r in records if len(r) >= config.window]
    if not eligible:
        raise ValueError(f"no clip has at least window={config.window} frames")
    clips = [_ClipTensors(r) for r in eligible]

    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    trainable = apply_freeze_plan(models, config.phase)
    opt = torch.optim.Adam(trainable, lr=config.lr)

    log_path = out_dir / LOG_NAME
    final_path = out_dir / f"phase{config.phase}_final.ckpt"
    base_meta = dict(metadata or {})
    losses: list[float] = []
    start_time = time.monotonic()
    with open(log_path, "w", encoding="utf-8") as fh:
        for step in range(config.steps):
            lr_now = config.lr_at(step)
            for group in opt.param_groups:
                group["lr"] = lr_now
            loss = _batch_loss(models, clips, config, rng, gen)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
            fh.write(
                json.dumps(
                    {
                        "step": step,
                        "loss": losses[-1],
                        "lr": lr_now,
                        "checksums": group_checksums(models),
                    }
                )
                + "\n"
            )
            if (step + 1) % config.checkpoint_interval == 0 and step + 1 < config.steps:
                save_models(
                    out_dir / f"phase{config.phase}_step{step + 1:06d}.ckpt",
                    models,
                    {**base_meta, "phase": config.phase, "step": step + 1, "seed": config.seed},
                )
    save_models(final_path, models,
                {**base_meta, "phase": config.phase, "step": config.steps, "seed": config.seed})
    log.info(
        "phase %d: %d steps in %.1fs, final loss %s",
        config.phase, config.steps, time.monotonic() - start_time,
        f"{losses[-1]:.4f}" if losses else "n/a",
    )
    return TrainResult(models=models, losses=losses, log_path=log_path,
                       checkpoint_path=final_path)
