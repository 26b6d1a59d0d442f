"""Pinhole camera pose, projection, and trajectory files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera extrinsics plus pinhole intrinsics.

    A world point p maps to camera space as R @ p + t with +z in front of
    the camera. Intrinsics are (fx, fy, cx, cy) in pixels; pixel (row, col)
    has its center at (col + 0.5, row + 0.5).
    """

    rotation: np.ndarray
    translation: np.ndarray
    intrinsics: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        object.__setattr__(self, "intrinsics", np.asarray(self.intrinsics, dtype=np.float64))
        if self.rotation.shape != (3, 3):
            raise ValueError(f"rotation must be (3, 3), got {self.rotation.shape}")
        if np.abs(self.rotation @ self.rotation.T - np.eye(3)).max() > _ORTHO_TOL:
            raise ValueError("rotation must be orthonormal")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation must be proper (det +1)")
        if self.translation.shape != (3,):
            raise ValueError(f"translation must be (3,), got {self.translation.shape}")
        if self.intrinsics.shape != (4,):
            raise ValueError(f"intrinsics must be (fx, fy, cx, cy), got {self.intrinsics.shape}")
        if self.intrinsics[0] <= 0 or self.intrinsics[1] <= 0:
            raise ValueError("focal lengths must be positive")

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """(N, 3) world points -> (N, 3) camera-space points."""
        return points @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(N, 3) world points -> ((N, 2) pixel xy, (N,) camera depth)."""
        cam = self.to_camera(points)
        fx, fy, cx, cy = self.intrinsics
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = fx * cam[:, 0] / z + cx
            y = fy * cam[:, 1] / z + cy
        return np.stack([x, y], axis=1), z


def look_at(
    eye: np.ndarray, target: np.ndarray, intrinsics: np.ndarray, up=(0.0, 1.0, 0.0)
) -> CameraPose:
    """Camera at ``eye`` looking toward ``target`` with +y-ish image-up."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-12:
        raise ValueError("up direction parallel to view direction")
    right = right / rnorm
    down = np.cross(forward, right)  # image y grows downward
    rotation = np.stack([right, down, forward], axis=0)
    return CameraPose(rotation=rotation, translation=-rotation @ eye, intrinsics=intrinsics)


# Trajectory file: one frame per line, 16 numbers:
# r00 r01 r02 r10 r11 r12 r20 r21 r22  tx ty tz  fx fy cx cy


def save_trajectory(path: str | Path, trajectory: list[CameraPose]) -> None:
    lines = []
    for cam in trajectory:
        nums = np.concatenate([cam.rotation.ravel(), cam.translation, cam.intrinsics])
        lines.append(" ".join(f"{x:.12g}" for x in nums))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_trajectory(path: str | Path) -> list[CameraPose]:
    out = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        nums = [float(x) for x in line.split()]
        if len(nums) != 16:
            raise ValueError(f"{path}:{lineno}: expected 16 numbers, got {len(nums)}")
        out.append(
            CameraPose(
                rotation=np.array(nums[:9]).reshape(3, 3),
                translation=np.array(nums[9:12]),
                intrinsics=np.array(nums[12:16]),
            )
        )
    return out
