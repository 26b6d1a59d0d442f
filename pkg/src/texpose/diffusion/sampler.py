"""Deterministic reverse sampler over a retention schedule."""

import numpy as np
import torch

from texpose.diffusion.schedule import NoiseSchedule

DEFAULT_SAMPLE_STEPS = 20


def ddim_timesteps(schedule: NoiseSchedule, num_steps: int) -> np.ndarray:
    """Descending timestep subset visited by the reverse pass.

    Evenly spans 1..T (endpoints included) with num_steps unique entries.
    """
    total = schedule.num_steps
    if num_steps < 0:
        raise ValueError(f"num_steps must be >= 0, got {num_steps}")
    if num_steps > total:
        raise ValueError(f"num_steps {num_steps} exceeds schedule length {total}")
    if num_steps == 0:
        return np.zeros(0, dtype=np.int64)
    # Anchor at T so the pass always starts from the noisiest timestep,
    # including the single-step case.
    grid = np.linspace(total, 1, num_steps)
    return np.unique(np.round(grid).astype(np.int64))[::-1].copy()


def ddim_sample(
    z_start: torch.Tensor,
    predict,
    schedule: NoiseSchedule,
    num_steps: int = DEFAULT_SAMPLE_STEPS,
) -> torch.Tensor:
    """Run the deterministic reverse trajectory from z_start at t=T.

    predict(z, t) must return the noise estimate for the batch z at the
    integer timestep t. Each step re-estimates the clean latent and moves
    it to the next (less noisy) timestep with zero injected stochasticity,
    so the output is a pure function of its inputs. num_steps=0 returns
    z_start unchanged.
    """
    steps = ddim_timesteps(schedule, num_steps)
    z = z_start.clone()
    for i, t in enumerate(steps):
        t = int(t)
        abar_t = schedule.alpha_bar(t)
        abar_prev = schedule.alpha_bar(int(steps[i + 1])) if i + 1 < len(steps) else 1.0
        eps = predict(z, t)
        if eps.shape != z.shape:
            raise ValueError(f"predictor returned shape {tuple(eps.shape)} for input {tuple(z.shape)}")
        z0_est = (z - np.sqrt(1.0 - abar_t) * eps) / np.sqrt(abar_t)
        z = np.sqrt(abar_prev) * z0_est + np.sqrt(1.0 - abar_prev) * eps
    return z
