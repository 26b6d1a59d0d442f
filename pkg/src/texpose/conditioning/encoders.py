"""Pose, background, and identity encoders feeding the denoiser."""

import torch
from torch import nn
from torch.nn import functional as F

from texpose.diffusion.blocks import SelfAttention2d

_POSE_SCALE = 8


class PoseExtractor(nn.Module):
    """Map a rendered pose image to a latent aligned with the noise grid.

    Four convolutions (three stride-2, one stride-1) bring 64x64 pixels to
    the 8x8 latent grid, then one spatial self-attention layer mixes the
    result. Fully trainable.
    """

    def __init__(self, pose_channels: int = 4, hidden: tuple = (32, 64, 64), heads: int = 2):
        super().__init__()
        h0, h1, h2 = hidden
        self.conv1 = nn.Conv2d(3, h0, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(h0, h1, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(h1, h2, 3, stride=2, padding=1)
        self.conv4 = nn.Conv2d(h2, pose_channels, 3, stride=1, padding=1)
        self.attn = SelfAttention2d(pose_channels, heads)
        self.pose_channels = pose_channels

    def forward(self, pose_map: torch.Tensor) -> torch.Tensor:
        if pose_map.ndim != 4 or pose_map.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) pose maps, got {tuple(pose_map.shape)}")
        h, w = pose_map.shape[-2:]
        if h % _POSE_SCALE or w % _POSE_SCALE or h < _POSE_SCALE or w < _POSE_SCALE:
            raise ValueError(f"pose map dims {h}x{w} must be divisible by {_POSE_SCALE}")
        x = F.silu(self.conv1(pose_map))
        x = F.silu(self.conv2(x))
        x = F.silu(self.conv3(x))
        x = self.conv4(x)
        x, _ = self.attn(x)
        return x


class BackgroundEncoder(nn.Module):
    """Learnable refinement of frozen-codec background latents."""

    def __init__(self, latent_channels: int = 4, hidden: int = 16):
        super().__init__()
        self.conv1 = nn.Conv2d(latent_channels, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, hidden, 3, padding=1)
        self.conv3 = nn.Conv2d(hidden, latent_channels, 3, padding=1)

    def forward(self, latents: torch.Tensor) -> torch.Tensor:
        x = F.silu(self.conv1(latents))
        x = F.silu(self.conv2(x))
        return self.conv3(x)

    def encode_frames(self, frames: torch.Tensor, codec) -> torch.Tensor:
        """Encode (N, 3, H, W) background plates to (N, c, h, w) latents."""
        if frames.ndim != 4 or frames.shape[0] < 1:
            raise ValueError(f"expected a nonempty (N, 3, H, W) stack, got {tuple(frames.shape)}")
        if not codec.frozen:
            raise ValueError("background encoding requires a frozen codec")
        return self.forward(codec.encode(frames))


class IdentityEmbedder(nn.Module):
    """Small convolutional token encoder standing in for an image-text
    embedding model. Kept frozen in both training phases; the interface
    (image in, token sequence out) is what the rest of the system sees.
    """

    NUM_TOKENS = 4

    def __init__(self, embed_dim: int = 64):
        super().__init__()
        self.embed_dim = embed_dim
        self.conv1 = nn.Conv2d(3, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(32, embed_dim, 3, stride=2, padding=1)

    def forward(self, fg_image: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) background-zeroed reference -> (B, K, e) tokens."""
        if fg_image.ndim != 4 or fg_image.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {tuple(fg_image.shape)}")
        x = F.silu(self.conv1(fg_image))
        x = F.silu(self.conv2(x))
        x = F.silu(self.conv3(x))
        x = F.adaptive_avg_pool2d(x, (2, 2))
        return x.flatten(2).transpose(1, 2)
