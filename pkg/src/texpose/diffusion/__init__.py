"""Latent video diffusion: schedule, denoiser, loss, and reverse sampler."""

from texpose.diffusion.sampler import DEFAULT_SAMPLE_STEPS, ddim_sample, ddim_timesteps
from texpose.diffusion.schedule import (
    NoiseSchedule,
    forward_diffuse,
    make_schedule,
    preconditioners,
)
from texpose.diffusion.unet import (
    PARAMETER_GROUPS,
    DenoiserUNet,
    DiffusionBatch,
    training_loss,
)

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "forward_diffuse",
    "preconditioners",
    "DEFAULT_SAMPLE_STEPS",
    "ddim_sample",
    "ddim_timesteps",
    "PARAMETER_GROUPS",
    "DenoiserUNet",
    "DiffusionBatch",
    "training_loss",
]
