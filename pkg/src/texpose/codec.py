"""Deterministic image/latent autoencoder.

Plays the role of the frozen VAE in latent diffusion, minus the
variational machinery: encoding is a plain conv stack, so the same image
always yields the same latent. After training the codec is frozen and its
weights are never touched again; the freeze is enforced through
``requires_grad`` and audited by weight checksums.

A scalar ``latent_gain`` (calibrated once at the end of codec training, in
the spirit of the fixed latent scaling constant of SD-style pipelines)
normalizes latent magnitude for the diffusion stack; ``decode`` divides it
back out, so reconstruction is unaffected.
"""

from __future__ import annotations

import json
import logging
import math
import time
from pathlib import Path

import numpy as np
import torch
from torch import nn

from texpose.checkpoint import array_checksum, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

TARGET_LATENT_STD = 0.5


class LatentCodec(nn.Module):
    """Conv encoder/decoder pair with 2**k spatial downsampling."""

    def __init__(self, scale_factor: int = 8, latent_channels: int = 4, base_width: int = 32):
        super().__init__()
        stages = int(math.log2(scale_factor))
        if 2**stages != scale_factor or stages < 1:
            raise ValueError(f"scale_factor must be a power of two >= 2, got {scale_factor}")
        self.scale_factor = scale_factor
        self.latent_channels = latent_channels
        self.base_width = base_width
        self.frozen = False
        self.register_buffer("latent_gain", torch.ones(()))

        enc: list[nn.Module] = [nn.Conv2d(3, base_width, 3, padding=1), nn.SiLU()]
        ch = base_width
        for _ in range(stages):
            nxt = min(ch * 2, base_width * 2)
            enc += [nn.Conv2d(ch, nxt, 3, stride=2, padding=1), nn.SiLU()]
            ch = nxt
        enc.append(nn.Conv2d(ch, latent_channels, 3, padding=1))
        self.encoder = nn.Sequential(*enc)

        dec: list[nn.Module] = [nn.Conv2d(latent_channels, ch, 3, padding=1), nn.SiLU()]
        for i in range(stages):
            nxt = base_width if i == stages - 1 else ch
            dec += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch, nxt, 3, padding=1),
                nn.SiLU(),
            ]
            ch = nxt
        dec.append(nn.Conv2d(ch, 3, 3, padding=1))
        self.decoder = nn.Sequential(*dec)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) in [0, 1] -> (B, c, H/s, W/s); deterministic."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W), got {tuple(images.shape)}")
        if images.shape[2] % self.scale_factor or images.shape[3] % self.scale_factor:
            raise ValueError(
                f"image size {tuple(images.shape[2:])} not divisible by {self.scale_factor}"
            )
        return self.encoder(images) * self.latent_gain

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        """(B, c, h, w) -> (B, 3, h*s, w*s) in [0, 1] (sigmoid-clamped)."""
        if latents.ndim != 4 or latents.shape[1] != self.latent_channels:
            raise ValueError(f"expected (B, {self.latent_channels}, h, w), got {tuple(latents.shape)}")
        return torch.sigmoid(self.decoder(latents / self.latent_gain))

    def freeze(self) -> "LatentCodec":
        self.frozen = True
        self.requires_grad_(False)
        self.eval()
        return self

    def weight_checksum(self) -> str:
        arrays = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        return array_checksum(arrays)


def train_codec(
    corpus: np.ndarray,
    steps: int = 2000,
    lr: float = 2e-3,
    batch_size: int = 8,
    seed: int = 0,
    log_path: str | Path | None = None,
    codec: LatentCodec | None = None,
) -> LatentCodec:
    """Fit the codec by reconstruction MSE and return it frozen.

    ``corpus`` is (N, 3, H, W) float in [0, 1]. With steps=0 the freshly
    initialized codec is frozen and returned as-is (latent_gain stays 1).
    """
    frames = np.asarray(corpus, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[0] == 0:
        raise ValueError("corpus must be a nonempty (N, 3, H, W) array")
    torch.manual_seed(seed)
    model = codec if codec is not None else LatentCodec()
    data = torch.from_numpy(frames)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    records = []
    start = time.monotonic()
    for step in range(steps):
        idx = torch.randint(0, data.shape[0], (min(batch_size, data.shape[0]),), generator=gen)
        batch = data[idx]
        recon = model.decode(model.encode(batch))
        loss = torch.mean((recon - batch) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 50 == 0 or step == steps - 1:
            records.append({"step": step, "loss": float(loss.item()), "lr": lr})
    if steps > 0:
        with torch.no_grad():
            std = model.encoder(data).std()
            if std > 1e-6:
                model.latent_gain.fill_(TARGET_LATENT_STD / float(std))
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    log.info("codec trained for %d steps in %.1fs", steps, time.monotonic() - start)
    return model.freeze()


def save_codec(path: str | Path, codec: LatentCodec) -> None:
    arrays = {k: v.detach().cpu().numpy() for k, v in codec.state_dict().items()}
    save_checkpoint(
        path,
        arrays,
        {
            "kind": "latent_codec",
            "scale_factor": codec.scale_factor,
            "latent_channels": codec.latent_channels,
            "base_width": codec.base_width,
            "frozen": codec.frozen,
        },
    )


def load_codec(path: str | Path) -> LatentCodec:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "latent_codec":
        raise ValueError(f"{path}: not a codec checkpoint (kind={meta.get('kind')})")
    codec = LatentCodec(
        scale_factor=meta["scale_factor"],
        latent_channels=meta["latent_channels"],
        base_width=meta["base_width"],
    )
    codec.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in arrays.items()})
    if meta.get("frozen"):
        codec.freeze()
    return codec
