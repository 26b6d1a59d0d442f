"""Complete conditioning set consumed by the denoiser."""

from dataclasses import dataclass

import torch

from texpose.conditioning.foreground import ForegroundFeatureSet


@dataclass
class ConditioningBundle:
    """Everything predict_noise needs besides the noisy latent itself.

    pose_latent: (B, F, c_p, h, w); bg_latents: (B, F, c, h, w) with one
    latent per generated frame; identity: (B, K, e) token embedding; fg:
    per-layer reference features. lam weights the background key term.
    """

    pose_latent: torch.Tensor
    fg: ForegroundFeatureSet
    bg_latents: torch.Tensor
    identity: torch.Tensor
    lam: float = 1.0

    def __post_init__(self):
        for field in ("pose_latent", "fg", "bg_latents", "identity"):
            if getattr(self, field) is None:
                raise ValueError(f"conditioning bundle is missing: {field}")
        if self.pose_latent.ndim != 5:
            raise ValueError(f"pose_latent must be (B, F, c, h, w), got {tuple(self.pose_latent.shape)}")
        if self.bg_latents.ndim != 5:
            raise ValueError(f"bg_latents must be (B, F, c, h, w), got {tuple(self.bg_latents.shape)}")
        if self.bg_latents.shape[1] != self.pose_latent.shape[1]:
            raise ValueError(
                f"background frame count {self.bg_latents.shape[1]} != window length "
                f"{self.pose_latent.shape[1]}"
            )
        if self.identity.ndim != 3 or self.identity.shape[1] < 1:
            raise ValueError(f"identity must be (B, K>=1, e), got {tuple(self.identity.shape)}")
        if not torch.all(torch.isfinite(self.identity)):
            raise ValueError("identity embedding must be finite")
