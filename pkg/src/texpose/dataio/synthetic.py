"""Procedural identities, motions, camera paths, and background plates.

Everything here is a pure function of its seeds, so clips regenerate
bit-identically and manifests only need to store seeds and states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from texpose.body import BodyModelState, CameraPose, UVTextureMap, look_at
from texpose.dataio.humanoid import _PARTS, CHEST, HEAD, L_HIP, L_SHOULDER, R_HIP, R_SHOULDER, part_uv_rect

CAMERA_KINDS = ("static", "orbit", "pan")
BACKGROUND_KINDS = ("gradient", "checker")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Recipe for one synthetic clip; seeds make it reproducible."""

    identity_seed: int
    motion_seed: int
    camera_kind: str = "static"
    num_frames: int = 8
    image_size: tuple[int, int] = (64, 64)
    texture_size: tuple[int, int] = (48, 48)
    motion_amplitude: float = 0.5
    background_kind: str = "gradient"
    background_drift: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if self.camera_kind not in CAMERA_KINDS:
            raise ValueError(f"camera_kind must be one of {CAMERA_KINDS}")
        if self.background_kind not in BACKGROUND_KINDS:
            raise ValueError(f"background_kind must be one of {BACKGROUND_KINDS}")
        if not 0.0 <= self.motion_amplitude <= 0.8:
            raise ValueError("motion_amplitude must stay in [0, 0.8]")


def make_identity_texture(identity_seed: int, size: tuple[int, int] = (48, 48)) -> UVTextureMap:
    """Fully-valid texture: per-part base colors with horizontal stripes."""
    rng = np.random.default_rng(np.uint64(identity_seed))
    h, w = size
    texels = np.empty((h, w, 3))
    texels[:] = rng.uniform(0.05, 0.95, size=3)
    for _name, *_rest, cell in _PARTS:
        u0, v0, uw, vh = part_uv_rect(cell)
        c0 = rng.uniform(0.05, 0.95, size=3)
        c1 = rng.uniform(0.05, 0.95, size=3)
        period = int(rng.integers(3, 7))
        r0, r1 = int(np.floor(v0 * h)), int(np.ceil((v0 + vh) * h))
        c0i, c1i = int(np.floor(u0 * w)), int(np.ceil((u0 + uw) * w))
        rows = np.arange(r0, r1)
        stripe = (rows // period) % 2
        block = np.where(stripe[:, None, None] > 0, c1, c0)
        texels[r0:r1, c0i:c1i] = block
    return UVTextureMap(texels=texels, validity_mask=np.ones((h, w), dtype=bool))


def motion_states(
    motion_seed: int, num_frames: int, amplitude: float = 0.5
) -> list[BodyModelState]:
    """Walk-like sinusoidal joint swings with seeded phases.

    The pattern completes whole cycles over the clip, so frame N would
    equal frame 0 (used by the periodicity tests).
    """
    rng = np.random.default_rng(np.uint64(motion_seed))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    cycles = int(rng.integers(1, 3))
    states = []
    for i in range(num_frames):
        t = 2.0 * np.pi * cycles * i / num_frames + phase
        swing = amplitude * np.sin(t)
        theta = np.zeros((7, 3))
        theta[L_SHOULDER, 0] = swing
        theta[R_SHOULDER, 0] = -swing
        theta[L_HIP, 0] = -0.6 * swing
        theta[R_HIP, 0] = 0.6 * swing
        theta[CHEST, 1] = 0.15 * swing
        theta[HEAD, 0] = 0.1 * amplitude * np.sin(t + 0.5)
        states.append(BodyModelState(theta=theta, frame_index=i))
    return states


def default_intrinsics(image_size: tuple[int, int]) -> np.ndarray:
    h, w = image_size
    focal = 1.1 * min(h, w)
    return np.array([focal, focal, w / 2.0, h / 2.0])


def camera_path(
    kind: str, num_frames: int, image_size: tuple[int, int] = (64, 64)
) -> list[CameraPose]:
    """Deterministic camera trajectory of the requested kind."""
    intr = default_intrinsics(image_size)
    target = np.array([0.0, 0.05, 0.0])
    distance = 2.3
    cams = []
    for i in range(num_frames):
        if kind == "static":
            eye = np.array([0.0, 0.05, -distance])
        elif kind == "orbit":
            phi = 2.0 * np.pi * i / num_frames
            eye = np.array([distance * np.sin(phi), 0.05, -distance * np.cos(phi)])
        elif kind == "pan":
            frac = i / max(num_frames - 1, 1)
            eye = np.array([-0.5 + 1.0 * frac, 0.05, -distance])
        else:
            raise ValueError(f"unknown camera kind {kind!r}")
        cams.append(look_at(eye, target, intr))
    return cams


def orbit_camera_at(phi: float, image_size: tuple[int, int] = (64, 64)) -> CameraPose:
    """Single orbit camera at angle ``phi`` (radians); phi=0 is the front."""
    intr = default_intrinsics(image_size)
    distance = 2.3
    eye = np.array([distance * np.sin(phi), 0.05, -distance * np.cos(phi)])
    return look_at(eye, np.array([0.0, 0.05, 0.0]), intr)


def make_plate(kind: str, seed: int, size: tuple[int, int]) -> np.ndarray:
    """Base background plate in [0, 1], (H, W, 3)."""
    rng = np.random.default_rng(np.uint64(seed))
    h, w = size
    c0 = rng.uniform(0.0, 1.0, size=3)
    c1 = rng.uniform(0.0, 1.0, size=3)
    if kind == "gradient":
        axis = int(rng.integers(0, 2))
        ramp = np.linspace(0.0, 1.0, h if axis == 0 else w)
        ramp = ramp[:, None] if axis == 0 else ramp[None, :]
        ramp = np.broadcast_to(ramp, (h, w))[..., None]
        return c0 * (1.0 - ramp) + c1 * ramp
    if kind == "checker":
        cell = int(rng.integers(6, 12))
        jj, ii = np.meshgrid(np.arange(w), np.arange(h))
        parity = ((ii // cell + jj // cell) % 2)[..., None]
        return np.where(parity > 0, c1, c0)
    raise ValueError(f"unknown background kind {kind!r}")


def plate_sequence(spec: SyntheticSceneSpec) -> list[np.ndarray]:
    """Per-frame plates: the base plate with integer wrap-around drift."""
    base = make_plate(spec.background_kind, spec.identity_seed ^ 0x5EED, spec.image_size)
    dy, dx = spec.background_drift
    return [np.roll(base, shift=(i * dy, i * dx), axis=(0, 1)) for i in range(spec.num_frames)]
