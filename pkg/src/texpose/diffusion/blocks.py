"""Building blocks shared by the denoiser and its reference clone.

The trunk is designed to stay useful while frozen: residual branches get
small-gain final layers so every block is near identity at init, and the
temporal attention out-projection starts at exactly zero so enabling it
is a bit-exact no-op until phase-2 training moves it.
"""

import math

import torch
from torch import nn
from torch.nn import functional as F

_RESIDUAL_GAIN = 0.2


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic sin/cos positional code for integer steps; (B,) -> (B, dim)."""
    if dim < 2:
        raise ValueError(f"embedding dim must be >= 2, got {dim}")
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64, device=t.device) / max(half - 1, 1)
    )
    args = t.reshape(-1, 1).to(torch.float64) * freqs.reshape(1, -1)
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def scale_module_(module: nn.Module, gain: float) -> nn.Module:
    """Scale all weights/biases of a module in place (init-time helper)."""
    with torch.no_grad():
        for p in module.parameters():
            p.mul_(gain)
    return module


def zero_module_(module: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def _norm_groups(width: int) -> int:
    return 8 if width % 8 == 0 else 1


class ResBlock(nn.Module):
    """Two-conv residual block with an additive timestep bias."""

    def __init__(self, width: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_norm_groups(width), width)
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.time_proj = nn.Linear(emb_dim, width)
        self.norm2 = nn.GroupNorm(_norm_groups(width), width)
        self.conv2 = scale_module_(nn.Conv2d(width, width, 3, padding=1), _RESIDUAL_GAIN)

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(t_emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class SelfAttention2d(nn.Module):
    """Spatial self-attention over a feature map's pixel tokens.

    Extra tokens, when given, extend only the key/value set: queries stay
    the map's own tokens, so the output keeps the map's token count.
    """

    def __init__(self, width: int, heads: int = 2):
        super().__init__()
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.norm = nn.LayerNorm(width)
        self.to_q = nn.Linear(width, width, bias=False)
        self.to_k = nn.Linear(width, width, bias=False)
        self.to_v = nn.Linear(width, width, bias=False)
        self.out_proj = scale_module_(nn.Linear(width, width), _RESIDUAL_GAIN)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.width // self.heads).transpose(1, 2)

    def forward(self, x: torch.Tensor, extra_tokens: torch.Tensor | None = None):
        """x: (B, C, H, W); extra_tokens: (B, N_extra, C) or None.

        Returns (feature map, output tokens), both post-residual.
        """
        b, c, height, width = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        h = self.norm(tokens)
        source = h if extra_tokens is None else torch.cat([h, extra_tokens], dim=1)
        q = self._split(self.to_q(h))
        k = self._split(self.to_k(source))
        v = self._split(self.to_v(source))
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.width // self.heads), dim=-1)
        joined = (att @ v).transpose(1, 2).reshape(b, tokens.shape[1], c)
        out_tokens = tokens + self.out_proj(joined)
        return out_tokens.transpose(1, 2).reshape(b, c, height, width), out_tokens


class TemporalAttention(nn.Module):
    """Frame-axis attention applied independently at each spatial position.

    The output projection is zero-initialized, making the module an exact
    identity until trained.
    """

    def __init__(self, width: int, heads: int = 2):
        super().__init__()
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.norm = nn.LayerNorm(width)
        self.to_q = nn.Linear(width, width, bias=False)
        self.to_k = nn.Linear(width, width, bias=False)
        self.to_v = nn.Linear(width, width, bias=False)
        self.out_proj = zero_module_(nn.Linear(width, width))

    def forward(self, x: torch.Tensor, batch: int, frames: int) -> torch.Tensor:
        """x: (batch*frames, C, H, W) grouped frame-major per sample."""
        if frames < 1:
            raise ValueError(f"frame count must be >= 1, got {frames}")
        bf, c, height, width = x.shape
        if bf != batch * frames:
            raise ValueError(f"leading dim {bf} != batch {batch} * frames {frames}")
        tokens = x.reshape(batch, frames, c, height * width).permute(0, 3, 1, 2)
        tokens = tokens.reshape(batch * height * width, frames, c)
        h = self.norm(tokens)
        h = h + sinusoidal_embedding(torch.arange(frames, device=x.device), c).to(h.dtype)
        split = lambda y: y.reshape(y.shape[0], frames, self.heads, c // self.heads).transpose(1, 2)
        q, k, v = split(self.to_q(h)), split(self.to_k(h)), split(self.to_v(h))
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(c // self.heads), dim=-1)
        joined = (att @ v).transpose(1, 2).reshape(tokens.shape[0], frames, c)
        out = tokens + self.out_proj(joined)
        out = out.reshape(batch, height * width, frames, c).permute(0, 2, 3, 1)
        return out.reshape(bf, c, height, width)


class Downsample(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


def make_fusion_conv(in_channels: int, out_channels: int, passthrough: int) -> nn.Conv3d:
    """Frozen input-fusion conv passing the first channels through untouched.

    Kernel is 1 along time so fusion never mixes frames. Output channel j
    for j < passthrough copies input channel j; remaining outputs start as
    small random mixtures.
    """
    if passthrough > min(in_channels, out_channels):
        raise ValueError("passthrough exceeds channel counts")
    conv = nn.Conv3d(in_channels, out_channels, (1, 3, 3), padding=(0, 1, 1))
    with torch.no_grad():
        conv.weight.mul_(_RESIDUAL_GAIN)
        conv.bias.zero_()
        conv.weight[:passthrough] = 0.0
        for j in range(passthrough):
            conv.weight[j, j, 0, 1, 1] = 1.0
    return conv


def make_merge_conv(width: int) -> nn.Conv2d:
    """Skip-merge conv: identity on the trunk half, damped mix of the skip."""
    conv = nn.Conv2d(2 * width, width, 3, padding=1)
    with torch.no_grad():
        conv.bias.zero_()
        conv.weight[:, width:].mul_(0.3)
        conv.weight[:, :width] = 0.0
        for j in range(width):
            conv.weight[j, j, 1, 1] = 1.0
    return conv
