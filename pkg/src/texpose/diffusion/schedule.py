"""Forward-process noise schedule and the identities derived from it.

Timesteps are 1-indexed: t ranges over 1..T and alpha_bar(T) is the
noisiest entry. Schedules are stored in float64 so downstream identities
(cumulative products, preconditioner tables) are as exact as the dtype
allows.
"""

from dataclasses import dataclass

import numpy as np
import torch

SCHEDULE_KINDS = ("linear-beta", "cosine")

_DEFAULT_BETA_START = 1e-4
_DEFAULT_BETA_END = 0.02
_COSINE_OFFSET = 0.008
_ALPHA_BAR_FLOOR = 1e-8


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal-retention table for the forward process.

    alphas_bar[i] is the retention at timestep t = i + 1; it must lie in
    (0, 1] and decrease strictly with t.
    """

    alphas_bar: np.ndarray
    kind: str

    def __post_init__(self):
        table = np.asarray(self.alphas_bar, dtype=np.float64)
        if table.ndim != 1 or table.size < 1:
            raise ValueError("alphas_bar must be a nonempty 1-D array")
        if not np.all(np.isfinite(table)):
            raise ValueError("alphas_bar must be finite")
        if np.any(table <= 0.0) or np.any(table > 1.0):
            raise ValueError("alphas_bar entries must lie in (0, 1]")
        if table.size > 1 and not np.all(np.diff(table) < 0.0):
            raise ValueError("alphas_bar must be strictly decreasing")
        object.__setattr__(self, "alphas_bar", table)

    @property
    def num_steps(self) -> int:
        return int(self.alphas_bar.size)

    def __len__(self) -> int:
        return self.num_steps

    def alpha_bar(self, t):
        """Retention for timestep t (scalar or array of ints in 1..T)."""
        idx = np.asarray(t)
        if not np.issubdtype(idx.dtype, np.integer):
            raise ValueError(f"timesteps must be integers, got dtype {idx.dtype}")
        if np.any(idx < 1) or np.any(idx > self.num_steps):
            raise ValueError(f"timestep out of range 1..{self.num_steps}: {t}")
        out = self.alphas_bar[idx - 1]
        return float(out) if np.isscalar(t) or idx.ndim == 0 else out


def make_schedule(kind: str = "linear-beta", num_steps: int = 1000) -> NoiseSchedule:
    """Build a retention schedule of the given kind over num_steps timesteps."""
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    if kind == "linear-beta":
        betas = np.linspace(_DEFAULT_BETA_START, _DEFAULT_BETA_END, num_steps, dtype=np.float64)
        table = np.cumprod(1.0 - betas)
    elif kind == "cosine":
        def ramp(u):
            return np.cos((u + _COSINE_OFFSET) / (1.0 + _COSINE_OFFSET) * np.pi / 2.0) ** 2

        t = np.arange(1, num_steps + 1, dtype=np.float64)
        table = ramp(t / num_steps) / ramp(0.0)
        # The closed form hits 0 at the endpoint; keep entries in (0, 1].
        # Only the final entry can reach the floor at supported lengths,
        # so strict monotonicity survives (validated by the constructor).
        table = np.maximum(table, _ALPHA_BAR_FLOOR)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}, expected one of {SCHEDULE_KINDS}")
    return NoiseSchedule(alphas_bar=table, kind=kind)


def _broadcast_coeff(values: np.ndarray, like) -> "np.ndarray | torch.Tensor":
    """Reshape per-batch coefficients to broadcast against `like`."""
    shape = (-1,) + (1,) * (like.ndim - 1)
    if isinstance(like, torch.Tensor):
        return torch.as_tensor(values, dtype=like.dtype, device=like.device).reshape(shape)
    return np.asarray(values, dtype=like.dtype).reshape(shape)


def forward_diffuse(z0, t, eps, schedule: NoiseSchedule):
    """Noise a clean latent to timestep t.

    Returns sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps. t may be a scalar
    or a length-B vector pairing one timestep with each leading batch
    entry of z0. Accepts numpy arrays or torch tensors (matched kinds).
    """
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    t_arr = np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t)
    abar = schedule.alpha_bar(t_arr if t_arr.ndim else int(t_arr))
    abar = np.atleast_1d(np.asarray(abar, dtype=np.float64))
    if abar.size > 1 and abar.size != z0.shape[0]:
        raise ValueError(f"got {abar.size} timesteps for batch of {z0.shape[0]}")
    signal = _broadcast_coeff(np.sqrt(abar), z0)
    noise = _broadcast_coeff(np.sqrt(1.0 - abar), z0)
    return signal * z0 + noise * eps


def preconditioners(schedule: NoiseSchedule, cap: float = 4.0):
    """Output-parameterization tables for the denoiser.

    Returns (c_skip, c_out), each length T, where the network output F is
    mapped to a noise prediction as c_skip[t]*z_t + c_out[t]*F. With
    c_skip = min(1/sqrt(1-abar), cap) and c_out = c_skip*sqrt(abar), the
    optimal F is approximately the negated clean latent at every t, which
    keeps the target well-scaled for a mostly frozen trunk.
    """
    if cap <= 0:
        raise ValueError(f"cap must be positive, got {cap}")
    abar = schedule.alphas_bar
    c_skip = np.minimum(1.0 / np.sqrt(1.0 - abar), cap)
    c_out = c_skip * np.sqrt(abar)
    return c_skip, c_out
