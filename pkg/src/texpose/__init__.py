"""Pose-map driven human video synthesis.

Renders a textured low-poly body into per-frame pose maps, encodes
foreground appearance and background plates separately, and denoises a
video latent conditioned on all three. Subpackages:

- ``body``: textured body model, skinning, rasterization, UV textures
- ``codec``: deterministic image/latent autoencoder
- ``diffusion``: noise schedule, denoising U-Net, DDIM sampler
- ``conditioning``: pose/foreground/background/identity encoders and
  the fused dual-key cross-attention
- ``pipeline``: two-phase training, sliding-window synthesis
- ``dataio``: synthetic clip generator, manifests, batching
- ``evalkit``: reconstruction and distribution metrics
- ``cli``: command line entry points
"""

__version__ = "0.1.0"
