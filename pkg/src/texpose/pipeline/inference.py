"""Windowed synthesis: render controls, sample per window, aggregate, decode.

A job describes the whole target sequence. Sampling runs on overlapping
fixed-length windows that share per-frame starting noise, so the same frame
seen by two windows starts from the same draw; overlaps are then reconciled
by uniform averaging in latent space before a single decode pass.
"""

from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from texpose import pngio
from texpose.body import BodyModelState, CameraPose, PoseMap, UVTextureMap, render_sequence
from texpose.conditioning import ConditioningBundle, apply_mask
from texpose.dataio import build_humanoid
from texpose.diffusion import DEFAULT_SAMPLE_STEPS, ddim_sample
from texpose.pipeline.models import ModelSet

MANIFEST_NAME = "synthesis.json"


@dataclass(frozen=True)
class InferenceJob:
    """Everything needed to synthesize one sequence, in memory.

    The reference image fixes appearance, the state/camera tracks fix
    motion, and the background frames fix the scene; all three sequences
    must agree on length.
    """

    reference_image: np.ndarray
    reference_mask: np.ndarray
    texture: UVTextureMap
    states: tuple[BodyModelState, ...]
    cameras: tuple[CameraPose, ...]
    background_frames: np.ndarray
    window: int = 8
    stride: int = 4
    seed: int = 0
    lam: float = 1.0

    def __post_init__(self) -> None:
        n = len(self.states)
        if n < 1:
            raise ValueError("job must cover at least one frame")
        if len(self.cameras) != n:
            raise ValueError(f"{len(self.cameras)} cameras for {n} states")
        bg = np.asarray(self.background_frames)
        if bg.ndim != 4 or bg.shape[0] != n or bg.shape[1] != 3:
            raise ValueError(f"background_frames must be ({n}, 3, H, W), got {bg.shape}")
        ref = np.asarray(self.reference_image)
        if ref.ndim != 3 or ref.shape[0] != 3:
            raise ValueError(f"reference_image must be (3, H, W), got {ref.shape}")
        mask = np.asarray(self.reference_mask)
        if mask.shape != (1, *ref.shape[1:]):
            raise ValueError(f"reference_mask must be (1, H, W), got {mask.shape}")
        if ref.shape[1:] != bg.shape[2:]:
            raise ValueError(
                f"reference {ref.shape[1:]} and background {bg.shape[2:]} sizes differ"
            )
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if not 1 <= self.stride <= self.window:
            raise ValueError(f"stride must lie in [1, window], got {self.stride}")
        if self.window > n:
            raise ValueError(f"window {self.window} exceeds sequence length {n}")

    @property
    def num_frames(self) -> int:
        return len(self.states)

    @property
    def image_size(self) -> tuple[int, int]:
        return tuple(self.reference_image.shape[1:])


def job_hash(job: InferenceJob, sample_steps: int = DEFAULT_SAMPLE_STEPS) -> str:
    """Deterministic digest of every input that shapes the output frames."""
    digest = hashlib.sha256()
    for label, value in (
        ("window", job.window),
        ("stride", job.stride),
        ("seed", job.seed),
        ("lam", job.lam),
        ("sample_steps", sample_steps),
    ):
        digest.update(f"{label}={value!r};".encode("utf-8"))
    for arr in (job.reference_image, job.reference_mask, job.background_frames,
                job.texture.texels, job.texture.validity_mask):
        digest.update(np.ascontiguousarray(arr).tobytes())
    for state in job.states:
        digest.update(np.ascontiguousarray(state.theta).tobytes())
    for cam in job.cameras:
        for arr in (cam.rotation, cam.translation, cam.intrinsics):
            digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()


def window_starts(num_frames: int, window: int, stride: int) -> list[int]:
    """Start offsets of the sampling windows, clamped to cover the tail."""
    if num_frames < window:
        return []
    starts = list(range(0, num_frames - window + 1, stride))
    if starts[-1] != num_frames - window:
        starts.append(num_frames - window)
    return starts


def aggregate_windows(window_outputs, num_frames: int, window: int, stride: int):
    """Average overlapping window outputs into per-frame latents.

    ``window_outputs`` holds one (window, ...) array per start offset, in
    the order produced by window_starts. Each frame becomes the uniform
    mean of every window value covering it; frames covered by exactly one
    window pass through unchanged.
    """
    if not 1 <= stride <= window:
        raise ValueError(f"stride must lie in [1, window], got {stride}")
    starts = window_starts(num_frames, window, stride)
    outputs = list(window_outputs)
    if len(outputs) != len(starts):
        raise ValueError(f"expected {len(starts)} window outputs, got {len(outputs)}")
    sums: list = [None] * num_frames
    counts = [0] * num_frames
    for start, out in zip(starts, outputs):
        if out.shape[0] != window:
            raise ValueError(f"window output has {out.shape[0]} frames, expected {window}")
        for offset in range(window):
            frame = start + offset
            sums[frame] = out[offset] if sums[frame] is None else sums[frame] + out[offset]
            counts[frame] += 1
    gaps = [i for i, c in enumerate(counts) if c == 0]
    if gaps:
        raise ValueError(f"coverage gap: no window covers frames {gaps}")
    merged = [sums[i] / counts[i] for i in range(num_frames)]
    if isinstance(merged[0], torch.Tensor):
        return torch.stack(merged)
    return np.stack(merged)


@contextmanager
def _stage(name: str):
    """Re-raise stage failures with the failing stage named up front."""
    try:
        yield
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from exc


def synthesize(
    job: InferenceJob,
    models: ModelSet,
    out_dir: str | Path | None = None,
    sample_steps: int = DEFAULT_SAMPLE_STEPS,
    config_hash: str | None = None,
) -> np.ndarray:
    """Produce the job's frames as a (N, 3, H, W) float array in [0, 1].

    Deterministic given (job, models): per-frame noise is drawn once from
    the job seed and shared across windows. With ``out_dir`` set, numbered
    PNG frames and a manifest are written as well.
    """
    n, size = job.num_frames, job.image_size
    with _stage("pose rendering"):
        pose_maps = render_sequence(
            build_humanoid(), job.texture, list(job.states), list(job.cameras), size
        )
        pose_stack = torch.from_numpy(
            np.stack([np.moveaxis(p.pixels, -1, 0) for p in pose_maps]).astype(np.float32)
        )

    with _stage("conditioning"), torch.no_grad():
        ref = torch.from_numpy(
            (np.asarray(job.reference_image) * np.asarray(job.reference_mask)).astype(np.float32)
        )[None]
        ref_mask = torch.from_numpy(np.asarray(job.reference_mask, dtype=np.float32))[None]
        fg = apply_mask(models.fg_encoder(models.codec.encode(ref), ref_mask))
        identity = models.identity_embedder(ref)
        pose_latents = models.pose_extractor(pose_stack)
        bg_frames = torch.from_numpy(np.asarray(job.background_frames, dtype=np.float32))
        bg_latents = models.bg_encoder.encode_frames(bg_frames, models.codec)

    with _stage("sampling"), torch.no_grad():
        gen = torch.Generator().manual_seed(job.seed)
        noise = torch.randn(
            (n, models.codec.latent_channels, *pose_latents.shape[2:]), generator=gen
        )
        outputs = []
        for start in window_starts(n, job.window, job.stride):
            window = slice(start, start + job.window)
            bundle = ConditioningBundle(
                pose_latent=pose_latents[window][None],
                fg=fg,
                bg_latents=bg_latents[window][None],
                identity=identity,
                lam=job.lam,
            )

            def predict(z: torch.Tensor, t: int) -> torch.Tensor:
                steps = torch.full((1,), int(t), dtype=torch.long)
                return models.denoiser.predict_noise(z, steps, bundle, temporal_enabled=True)

            sampled = ddim_sample(noise[window][None], predict, models.schedule, sample_steps)
            outputs.append(sampled[0])

    with _stage("aggregation"):
        latents = aggregate_windows(outputs, n, job.window, job.stride)

    with _stage("decoding"), torch.no_grad():
        frames = models.codec.decode(latents).clamp(0.0, 1.0).numpy()

    if out_dir is not None:
        with _stage("writing"):
            _write_frames(Path(out_dir), frames, job, sample_steps, config_hash)
    return frames


def _write_frames(
    out_dir: Path,
    frames: np.ndarray,
    job: InferenceJob,
    sample_steps: int,
    config_hash: str | None,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(frames):
        name = f"{i:04d}.png"
        pngio.save_image(out_dir / name, np.moveaxis(frame, 0, -1))
        names.append(name)
    digest = job_hash(job, sample_steps)
    manifest = {
        "frame_count": int(frames.shape[0]),
        "frames": names,
        "seed": job.seed,
        "sample_steps": sample_steps,
        "job_hash": digest,
        "config_hash": config_hash if config_hash is not None else digest,
    }
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8"
    )


def composite_preview(pose_map: PoseMap, background: np.ndarray) -> np.ndarray:
    """Overlay a rendered pose map on a background plate.

    Pixels the render covers come from the pose map, the rest from the
    background; a debugging aid for checking control-signal alignment.
    """
    background = np.asarray(background, dtype=np.float64)
    if background.shape != pose_map.pixels.shape:
        raise ValueError(
            f"background {background.shape} does not match render {pose_map.pixels.shape}"
        )
    return np.where(pose_map.coverage_mask[..., None], pose_map.pixels, background)
