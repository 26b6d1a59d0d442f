"""Canonical low-poly humanoid used by the synthetic corpus.

Seven joints (pelvis, chest, head, two shoulders, two hips) drive six
vertical tube parts. Each part owns a rectangle of the UV atlas, with
the tube seam duplicated so texture coordinates never wrap.
"""

from __future__ import annotations

import numpy as np

from texpose.body import BodyMesh

PELVIS, CHEST, HEAD, L_SHOULDER, R_SHOULDER, L_HIP, R_HIP = range(7)

_JOINT_PIVOTS = np.array(
    [
        [0.00, 0.00, 0.0],   # pelvis
        [0.00, 0.22, 0.0],   # chest
        [0.00, 0.52, 0.0],   # head
        [-0.21, 0.44, 0.0],  # left shoulder
        [0.21, 0.44, 0.0],   # right shoulder
        [-0.10, -0.02, 0.0], # left hip
        [0.10, -0.02, 0.0],  # right hip
    ]
)
_JOINT_PARENTS = np.array([-1, PELVIS, CHEST, CHEST, CHEST, PELVIS, PELVIS])

# (name, bottom y, top y, center x, rx, rz, rings, segments, uv cell)
_PARTS = [
    ("torso", -0.06, 0.52, 0.00, 0.170, 0.095, 5, 8, (0, 0)),
    ("head", 0.54, 0.80, 0.00, 0.090, 0.090, 4, 6, (1, 0)),
    ("arm_l", -0.04, 0.42, -0.26, 0.045, 0.045, 5, 5, (2, 0)),
    ("arm_r", -0.04, 0.42, 0.26, 0.045, 0.045, 5, 5, (0, 1)),
    ("leg_l", -0.65, -0.04, -0.10, 0.062, 0.062, 6, 5, (1, 1)),
    ("leg_r", -0.65, -0.04, 0.10, 0.062, 0.062, 6, 5, (2, 1)),
]

_UV_MARGIN = 0.02


def part_uv_rect(cell: tuple[int, int]) -> tuple[float, float, float, float]:
    """(u0, v0, width, height) of a part's atlas rectangle; 3x2 grid."""
    u0 = cell[0] / 3.0 + _UV_MARGIN
    v0 = cell[1] / 2.0 + _UV_MARGIN
    return u0, v0, 1.0 / 3.0 - 2 * _UV_MARGIN, 0.5 - 2 * _UV_MARGIN


def _part_weights(name: str, frac: np.ndarray) -> np.ndarray:
    """Per-ring (J,) weight rows; frac runs 0 at the part bottom to 1 at top."""
    rows = np.zeros((len(frac), 7))
    if name == "torso":
        blend = np.clip((frac - 0.25) / 0.5, 0.0, 1.0)
        rows[:, PELVIS] = 1.0 - blend
        rows[:, CHEST] = blend
    elif name == "head":
        rows[:, HEAD] = 1.0
    elif name == "arm_l":
        rows[:, L_SHOULDER] = 1.0
    elif name == "arm_r":
        rows[:, R_SHOULDER] = 1.0
    elif name == "leg_l":
        rows[:, L_HIP] = 1.0
    else:
        rows[:, R_HIP] = 1.0
    return rows


def build_humanoid() -> BodyMesh:
    """Deterministic canonical humanoid, about 1.5 model units tall."""
    verts: list[np.ndarray] = []
    uvs: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    tris: list[list[int]] = []

    for name, y0, y1, cx, rx, rz, rings, segs, cell in _PARTS:
        base = len(verts)
        u0, v0, uw, vh = part_uv_rect(cell)
        frac = np.linspace(0.0, 1.0, rings)
        ring_weights = _part_weights(name, frac)
        for k in range(rings):
            y = y0 + (y1 - y0) * frac[k]
            for s in range(segs + 1):  # seam column duplicated
                phi = 2.0 * np.pi * s / segs
                verts.append(np.array([cx + rx * np.cos(phi), y, rz * np.sin(phi)]))
                uvs.append(np.array([u0 + uw * s / segs, v0 + vh * frac[k]]))
                weights.append(ring_weights[k])
        cols = segs + 1
        for k in range(rings - 1):
            for s in range(segs):
                a = base + k * cols + s
                b = a + 1
                c = a + cols
                d = c + 1
                tris.append([a, c, b])
                tris.append([b, c, d])
        # End caps: a fan from a center vertex to the first/last ring.
        for ring_idx, vfrac in ((0, 0.0), (rings - 1, 1.0)):
            center = len(verts)
            y = y0 + (y1 - y0) * vfrac
            verts.append(np.array([cx, y, 0.0]))
            uvs.append(np.array([u0 + uw * 0.5, v0 + vh * vfrac]))
            weights.append(ring_weights[ring_idx])
            ring0 = base + ring_idx * cols
            for s in range(segs):
                tris.append([center, ring0 + s, ring0 + s + 1])

    return BodyMesh(
        vertices=np.array(verts),
        triangles=np.array(tris, dtype=np.int64),
        uv_coords=np.array(uvs),
        joint_weights=np.array(weights),
        joint_pivots=_JOINT_PIVOTS,
        joint_parents=_JOINT_PARENTS,
    )
