"""Conditional denoiser with grouped, freeze-auditable parameters.

Layout (latent side s at 64x64 pixels is 8):
    fuse-in conv -> [s, res+self+cross+temporal] -> down
               -> [s/2, same stack] -> down
               -> [s/4 bottleneck stack] -> up+merge -> up+merge -> out conv

Self-attention sites take the reference foreground tokens as extra
keys/values. Cross-attention sites run the dual-key update; the two
encoder-half sites use only the self-key term while the bottleneck site
(decoder half) adds background keys. The network output F is mapped to a
noise prediction via schedule-derived tables: eps = c_skip*z_t + c_out*F,
which keeps the regression target near the (negated) clean latent so the
trainable conditioning pathways can fit it through a frozen trunk.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from texpose.checkpoint import array_checksum
from texpose.conditioning.attention import AttentionProjections, fused_cross_attention
from texpose.diffusion.blocks import (
    Downsample,
    ResBlock,
    SelfAttention2d,
    TemporalAttention,
    Upsample,
    make_fusion_conv,
    make_merge_conv,
    scale_module_,
    sinusoidal_embedding,
)
from texpose.diffusion.schedule import NoiseSchedule, forward_diffuse, preconditioners

PARAMETER_GROUPS = (
    "input_fusion",
    "conv_blocks",
    "spatial_self_attention",
    "cross_attention",
    "temporal_attention",
)

_GROUP_PREFIXES = {
    "fuse_in": "input_fusion",
    "attn": "spatial_self_attention",
    "cross": "cross_attention",
    "temp": "temporal_attention",
}

_BUNDLE_FIELDS = ("pose_latent", "fg", "bg_latents", "identity")


class CrossAttentionSite(nn.Module):
    """One dual-key attention site operating on a feature map's tokens."""

    def __init__(self, width: int, identity_dim: int, latent_channels: int,
                 heads: int = 2, use_background: bool = False):
        super().__init__()
        self.width = width
        self.heads = heads
        self.use_background = use_background
        self.norm = nn.LayerNorm(width)
        self.query_weight = nn.Parameter(torch.empty(width, width))
        self.key_weight = nn.Parameter(torch.empty(width, width))
        self.value_weight = nn.Parameter(torch.empty(identity_dim, width))
        for w in (self.query_weight, self.key_weight, self.value_weight):
            nn.init.xavier_uniform_(w)
        if use_background:
            self.lift = nn.Parameter(torch.empty(latent_channels, width))
            nn.init.xavier_uniform_(self.lift)

    def forward(self, x: torch.Tensor, bg_latents: torch.Tensor | None,
                identity: torch.Tensor, lam: float) -> torch.Tensor:
        """x: (B, C, H, W); bg_latents: (B, c_lat, hb, wb); identity: (B, K, e)."""
        b, c, height, width = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        h = self.norm(tokens)
        projections = AttentionProjections(
            query_weight=self.query_weight,
            key_weight=self.key_weight,
            value_weight=self.value_weight,
        )
        if self.use_background:
            pooled = F.adaptive_avg_pool2d(bg_latents, (height, width))
            bg_tokens = pooled.flatten(2).transpose(1, 2) @ self.lift
            update = fused_cross_attention(h, bg_tokens, identity, projections,
                                           lam=lam, num_heads=self.heads)
        else:
            update = fused_cross_attention(h, None, identity, projections,
                                           lam=lam, num_heads=self.heads)
        out = tokens + update
        return out.transpose(1, 2).reshape(b, c, height, width)


class DenoiserUNet(nn.Module):
    """Three-resolution conditional denoiser over video latent windows."""

    def __init__(self, schedule: NoiseSchedule, latent_channels: int = 4,
                 pose_channels: int = 4, widths: tuple = (32, 48, 64),
                 emb_dim: int = 64, identity_dim: int = 64, heads: int = 2,
                 skip_cap: float = 4.0):
        super().__init__()
        if len(widths) != 3:
            raise ValueError(f"expected 3 trunk widths, got {widths}")
        self.latent_channels = latent_channels
        self.pose_channels = pose_channels
        self.widths = tuple(int(w) for w in widths)
        self.emb_dim = emb_dim
        self.identity_dim = identity_dim
        self.heads = heads
        w0, w1, w2 = self.widths

        self.fuse_in = make_fusion_conv(latent_channels + pose_channels, w0,
                                        passthrough=latent_channels + pose_channels)
        self.down0 = ResBlock(w0, emb_dim)
        self.attn0 = SelfAttention2d(w0, heads)
        self.cross0 = CrossAttentionSite(w0, identity_dim, latent_channels, heads, use_background=False)
        self.temp0 = TemporalAttention(w0, heads)
        self.pool0 = Downsample(w0, w1)
        self.down1 = ResBlock(w1, emb_dim)
        self.attn1 = SelfAttention2d(w1, heads)
        self.cross1 = CrossAttentionSite(w1, identity_dim, latent_channels, heads, use_background=False)
        self.temp1 = TemporalAttention(w1, heads)
        self.pool1 = Downsample(w1, w2)
        self.mid = ResBlock(w2, emb_dim)
        self.attn2 = SelfAttention2d(w2, heads)
        self.cross2 = CrossAttentionSite(w2, identity_dim, latent_channels, heads, use_background=True)
        self.temp2 = TemporalAttention(w2, heads)
        self.up1 = Upsample(w2, w1)
        self.merge1 = make_merge_conv(w1)
        self.res_u1 = ResBlock(w1, emb_dim)
        self.temp_u1 = TemporalAttention(w1, heads)
        self.up0 = Upsample(w1, w0)
        self.merge0 = make_merge_conv(w0)
        self.res_u0 = ResBlock(w0, emb_dim)
        self.temp_u0 = TemporalAttention(w0, heads)
        self.out_conv = scale_module_(nn.Conv2d(w0, latent_channels, 3, padding=1), 0.5)

        c_skip, c_out = preconditioners(schedule, cap=skip_cap)
        self.register_buffer("c_skip", torch.from_numpy(np.asarray(c_skip, dtype=np.float32)))
        self.register_buffer("c_out", torch.from_numpy(np.asarray(c_out, dtype=np.float32)))

    @property
    def num_timesteps(self) -> int:
        return int(self.c_skip.shape[0])

    # -- parameter bookkeeping ------------------------------------------------

    def parameter_groups(self) -> dict:
        """Map each named group to its {param_name: tensor} members.

        Every parameter lands in exactly one group; anything not matched
        by an attention/fusion prefix is trunk convolution.
        """
        groups = {name: {} for name in PARAMETER_GROUPS}
        for name, param in self.named_parameters():
            head = name.split(".", 1)[0]
            target = "conv_blocks"
            for prefix, group in _GROUP_PREFIXES.items():
                if head.startswith(prefix):
                    target = group
                    break
            groups[target][name] = param
        return groups

    def group_checksums(self) -> dict:
        return {
            group: array_checksum({k: v.detach().cpu().numpy() for k, v in members.items()})
            for group, members in self.parameter_groups().items()
        }

    def set_group_trainable(self, group: str, trainable: bool) -> None:
        members = self.parameter_groups()
        if group not in members:
            raise ValueError(f"unknown parameter group {group!r}")
        for param in members[group].values():
            param.requires_grad_(trainable)

    # -- forward passes -------------------------------------------------------

    def _site_stack(self, x, t_emb, res, attn, cross, temp, fg_tokens,
                    bg_flat, identity, lam, batch, frames, temporal_enabled, captured):
        x = res(x, t_emb)
        x, tokens = attn(x, extra_tokens=fg_tokens)
        if captured is not None:
            captured.append(tokens)
        if identity is not None:
            x = cross(x, bg_flat, identity, lam)
        if temporal_enabled:
            x = temp(x, batch, frames)
        return x

    def _trunk(self, z, t, pose, fg_features, bg, identity, lam,
               temporal_enabled, capture):
        batch, frames = z.shape[:2]
        x = torch.cat([z, pose], dim=2).transpose(1, 2)
        x = self.fuse_in(x).transpose(1, 2).flatten(0, 1)
        t_emb = sinusoidal_embedding(t.reshape(-1), self.emb_dim).to(x.dtype)
        t_emb = t_emb.repeat_interleave(frames, dim=0)
        bg_flat = bg.flatten(0, 1) if bg is not None else None
        ident_flat = identity.repeat_interleave(frames, dim=0) if identity is not None else None

        def fg(level):
            if fg_features is None:
                return None
            tokens = fg_features[level]
            return tokens.repeat_interleave(frames, dim=0)

        captured = [] if capture else None
        x = self._site_stack(x, t_emb, self.down0, self.attn0, self.cross0, self.temp0,
                             fg(0), None, ident_flat, lam, batch, frames, temporal_enabled, captured)
        skip0 = x
        x = self.pool0(x)
        x = self._site_stack(x, t_emb, self.down1, self.attn1, self.cross1, self.temp1,
                             fg(1), None, ident_flat, lam, batch, frames, temporal_enabled, captured)
        skip1 = x
        x = self.pool1(x)
        x = self._site_stack(x, t_emb, self.mid, self.attn2, self.cross2, self.temp2,
                             fg(2), bg_flat, ident_flat, lam, batch, frames, temporal_enabled, captured)
        x = self.merge1(torch.cat([self.up1(x), skip1], dim=1))
        x = self.res_u1(x, t_emb)
        if temporal_enabled:
            x = self.temp_u1(x, batch, frames)
        x = self.merge0(torch.cat([self.up0(x), skip0], dim=1))
        x = self.res_u0(x, t_emb)
        if temporal_enabled:
            x = self.temp_u0(x, batch, frames)
        out = self.out_conv(x)
        out = out.reshape(batch, frames, *out.shape[1:])
        return out, captured

    def predict_noise(self, z_t: torch.Tensor, t: torch.Tensor, bundle,
                      temporal_enabled: bool = False) -> torch.Tensor:
        """Noise estimate for a latent window z_t: (B, F, c, h, w) at steps t: (B,)."""
        if z_t.ndim != 5 or z_t.shape[2] != self.latent_channels:
            raise ValueError(f"expected (B, F, {self.latent_channels}, h, w), got {tuple(z_t.shape)}")
        if bundle is None:
            raise ValueError("conditioning bundle is required")
        missing = [f for f in _BUNDLE_FIELDS if getattr(bundle, f, None) is None]
        if missing:
            raise ValueError(f"conditioning bundle is missing: {', '.join(missing)}")
        t = torch.as_tensor(t, device=z_t.device).reshape(-1).long()
        if t.shape[0] != z_t.shape[0]:
            raise ValueError(f"got {t.shape[0]} timesteps for batch of {z_t.shape[0]}")
        if torch.any(t < 1) or torch.any(t > self.num_timesteps):
            raise ValueError(f"timesteps out of range 1..{self.num_timesteps}")
        pose = bundle.pose_latent
        if pose.shape[-2:] != z_t.shape[-2:] or pose.shape[:2] != z_t.shape[:2]:
            raise ValueError(f"pose latent {tuple(pose.shape)} does not align with z_t {tuple(z_t.shape)}")
        bg = bundle.bg_latents
        if bg.shape[:2] != z_t.shape[:2]:
            raise ValueError(f"background latents {tuple(bg.shape)} do not align with z_t {tuple(z_t.shape)}")
        lam = float(getattr(bundle, "lam", 1.0))
        raw, _ = self._trunk(z_t, t, pose, bundle.fg.features, bg, bundle.identity,
                             lam, temporal_enabled, capture=False)
        shape = (-1,) + (1,) * (z_t.ndim - 1)
        c_skip = self.c_skip[t - 1].to(z_t.dtype).reshape(shape)
        c_out = self.c_out[t - 1].to(z_t.dtype).reshape(shape)
        return c_skip * z_t + c_out * raw

    def reference_features(self, latent: torch.Tensor) -> list:
        """Run the unconditioned trunk on a clean latent, collecting the
        token maps emitted by each self-attention site.

        Used by the foreground reference branch: timestep 0, zero pose
        channels, no conditioning, no temporal mixing. Returns 3 token
        maps of shape (B, h_l*w_l, c_l) at halving resolutions.
        """
        if latent.ndim != 4 or latent.shape[1] != self.latent_channels:
            raise ValueError(f"expected (B, {self.latent_channels}, h, w), got {tuple(latent.shape)}")
        z = latent.unsqueeze(1)
        pose = torch.zeros(
            z.shape[0], 1, self.pose_channels, *z.shape[-2:], dtype=z.dtype, device=z.device
        )
        t = torch.zeros(z.shape[0], dtype=torch.long, device=z.device)
        _, captured = self._trunk(z, t, pose, None, None, None, 0.0,
                                  temporal_enabled=False, capture=True)
        return captured


@dataclass
class DiffusionBatch:
    """One training batch: clean latents plus the sampled noising draw.

    Supplying t and eps in the batch (rather than drawing inside the loss)
    keeps the loss a deterministic function of its inputs.
    """

    z0: torch.Tensor
    t: torch.Tensor
    eps: torch.Tensor
    bundle: object

    def __post_init__(self):
        if self.z0.shape != self.eps.shape:
            raise ValueError(f"eps shape {tuple(self.eps.shape)} != z0 shape {tuple(self.z0.shape)}")
        if self.t.reshape(-1).shape[0] != self.z0.shape[0]:
            raise ValueError("need one timestep per batch entry")


def training_loss(batch: DiffusionBatch, model: DenoiserUNet, schedule: NoiseSchedule,
                  temporal_enabled: bool = False) -> torch.Tensor:
    """Unweighted noise-regression objective over one batch."""
    z_t = forward_diffuse(batch.z0, batch.t, batch.eps, schedule)
    eps_hat = model.predict_noise(z_t, batch.t, batch.bundle, temporal_enabled)
    return torch.mean((eps_hat - batch.eps) ** 2)
