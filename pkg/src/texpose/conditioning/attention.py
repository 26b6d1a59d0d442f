"""Fused dual-key cross-attention.

One query stream (the denoiser's hidden tokens) attends to two key
streams, background tokens and the denoiser tokens themselves, through a
single shared key projection. Both attention maps retrieve values derived
from the identity embedding, and the background term is weighted by a
scalar lambda before the two terms are summed:

    out = softmax(Q Kn^T / sqrt(dh)) Vn + lambda * softmax(Q Kb^T / sqrt(dh)) Vb

The identity embedding carries only a few tokens, so its projected value
rows are tiled cyclically along each key axis to pair one value row with
every key. Multi-head evaluation splits the projected dimensions into
equal head slices, applies the rule per head, and concatenates.
"""

import math
from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class AttentionProjections:
    """Projection weights for one fused cross-attention site.

    query_weight: (c_in, d), key_weight: (c_in, d) applied to both key
    streams, value_weight: (e, d_v). Token inputs multiply these on the
    right.
    """

    query_weight: torch.Tensor
    key_weight: torch.Tensor
    value_weight: torch.Tensor

    def __post_init__(self):
        for name in ("query_weight", "key_weight", "value_weight"):
            w = getattr(self, name)
            if not isinstance(w, torch.Tensor) or w.ndim != 2:
                raise ValueError(f"{name} must be a 2-D tensor")
        if self.query_weight.shape != self.key_weight.shape:
            raise ValueError(
                f"query/key projections must agree, got {tuple(self.query_weight.shape)} "
                f"vs {tuple(self.key_weight.shape)}"
            )

    @property
    def key_dim(self) -> int:
        return int(self.query_weight.shape[1])

    @property
    def value_dim(self) -> int:
        return int(self.value_weight.shape[1])


def _tile_rows(values: torch.Tensor, count: int) -> torch.Tensor:
    """Repeat value rows cyclically along the token axis to reach count."""
    idx = torch.arange(count, device=values.device) % values.shape[-2]
    return values.index_select(-2, idx)


def fused_cross_attention(
    z_encoder: torch.Tensor,
    z_bg: "torch.Tensor | None",
    f_clip: torch.Tensor,
    projections: AttentionProjections,
    lam: float = 1.0,
    num_heads: int = 1,
    return_weights: bool = False,
):
    """Apply the dual-key update rule to one frame's token set.

    z_encoder: (..., n, c_in) query/self-key tokens; z_bg: (..., m, c_in)
    background key tokens, or None for the single-term form that keeps
    only the self-key stream; f_clip: (..., k, e) identity value tokens.
    Leading batch dims are broadcast together. Returns (..., n, d_v), or
    a (output, (bg_weights, noise_weights)) pair with return_weights.
    """
    if z_encoder.ndim < 2 or (z_bg is not None and z_bg.ndim < 2) or f_clip.ndim < 2:
        raise ValueError("token inputs must have at least 2 dims (tokens, features)")
    if z_encoder.shape[-1] != projections.query_weight.shape[0]:
        raise ValueError(
            f"encoder feature dim {z_encoder.shape[-1]} does not match projection "
            f"input dim {projections.query_weight.shape[0]}"
        )
    if z_bg is not None and z_bg.shape[-1] != projections.key_weight.shape[0]:
        raise ValueError(
            f"background feature dim {z_bg.shape[-1]} does not match key projection "
            f"input dim {projections.key_weight.shape[0]}"
        )
    if f_clip.shape[-1] != projections.value_weight.shape[0]:
        raise ValueError(
            f"identity feature dim {f_clip.shape[-1]} does not match value projection "
            f"input dim {projections.value_weight.shape[0]}"
        )
    d, d_v = projections.key_dim, projections.value_dim
    if num_heads < 1 or d % num_heads or d_v % num_heads:
        raise ValueError(f"head count {num_heads} must divide key dim {d} and value dim {d_v}")

    q = z_encoder @ projections.query_weight
    k_noise = z_encoder @ projections.key_weight
    v = f_clip @ projections.value_weight
    n = q.shape[-2]
    v_noise = _tile_rows(v, n)

    def split(x, width):
        parts = x.shape[:-1] + (num_heads, width // num_heads)
        return x.reshape(parts).transpose(-3, -2)

    q_h = split(q, d)
    scale = 1.0 / math.sqrt(d // num_heads)
    att_noise = torch.softmax(q_h @ split(k_noise, d).transpose(-2, -1) * scale, dim=-1)
    out_h = att_noise @ split(v_noise, d_v)
    att_bg = None
    if z_bg is not None:
        k_bg = z_bg @ projections.key_weight
        m = k_bg.shape[-2]
        v_bg = _tile_rows(v, m)
        att_bg = torch.softmax(q_h @ split(k_bg, d).transpose(-2, -1) * scale, dim=-1)
        out_h = out_h + lam * (att_bg @ split(v_bg, d_v))
    out = out_h.transpose(-3, -2).reshape(out_h.shape[:-3] + (n, d_v))
    if return_weights:
        return out, (att_bg, att_noise)
    return out
