"""Z-buffer rasterization of the textured body into pose maps.

Pure numpy, per-triangle scanline over the clipped bounding box with
perspective-correct barycentric UV interpolation and nearest-texel
sampling. Deterministic by construction: triangles are processed in index
order and only a strictly smaller depth overwrites, so equal-depth overlap
goes to the lower triangle index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from texpose.body.camera import CameraPose
from texpose.body.mesh import BodyMesh, BodyModelState, pose_mesh
from texpose.body.texture import SurfaceCorrespondence, UVTextureMap, texel_index

_NEAR = 1e-6
_AREA_EPS = 1e-12


@dataclass(frozen=True)
class PoseMap:
    """Rendered control frame: colors in [0, 1] plus body coverage."""

    pixels: np.ndarray
    coverage_mask: np.ndarray
    fill_color: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=np.float64))
        object.__setattr__(self, "coverage_mask", np.asarray(self.coverage_mask, dtype=bool))
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {self.pixels.shape}")
        if self.coverage_mask.shape != self.pixels.shape[:2]:
            raise ValueError("coverage_mask shape must match pixels")
        if self.pixels.min(initial=0.0) < 0.0 or self.pixels.max(initial=0.0) > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        fill = np.asarray(self.fill_color, dtype=np.float64)
        if not np.allclose(self.pixels[~self.coverage_mask], fill, atol=1e-12):
            raise ValueError("uncovered pixels must equal the fill color")


def rasterize(
    mesh: BodyMesh,
    texture: UVTextureMap,
    camera: CameraPose,
    out_size: tuple[int, int],
    fill_color: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> tuple[PoseMap, SurfaceCorrespondence]:
    """Render and also return the per-pixel surface correspondence.

    Triangles with any vertex at or behind the near plane are dropped
    whole; synthetic scenes keep the body in front of the camera.
    """
    if not texture.validity_mask.all():
        raise ValueError("texture must be fully valid; run complete_texture first")
    height, width = out_size
    if height < 1 or width < 1:
        raise ValueError(f"bad output size {out_size}")
    screen, depth = camera.project(mesh.vertices)

    zbuf = np.full((height, width), np.inf)
    uv_buf = np.full((height, width, 2), np.nan)
    for tri_idx, tri in enumerate(mesh.triangles):
        z = depth[tri]
        if (z <= _NEAR).any():
            continue
        pts = screen[tri]  # (3, 2)
        area = _edge(pts[0], pts[1], pts[2])
        if abs(area) < _AREA_EPS:
            continue
        x0 = max(int(np.floor(pts[:, 0].min() - 0.5)), 0)
        x1 = min(int(np.ceil(pts[:, 0].max() - 0.5)), width - 1)
        y0 = max(int(np.floor(pts[:, 1].min() - 0.5)), 0)
        y1 = min(int(np.ceil(pts[:, 1].max() - 0.5)), height - 1)
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        px, py = np.meshgrid(xs, ys)
        centers = np.stack([px, py], axis=-1)
        bary = np.stack(
            [
                _edge(pts[1], pts[2], centers),
                _edge(pts[2], pts[0], centers),
                _edge(pts[0], pts[1], centers),
            ],
            axis=-1,
        ) / area
        inside = (bary >= 0.0).all(axis=-1)
        if not inside.any():
            continue
        inv_z = bary @ (1.0 / z)
        pix_depth = 1.0 / inv_z
        window = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        closer = inside & (pix_depth < window)
        if not closer.any():
            continue
        uv = (bary * (1.0 / z)) @ mesh.uv_coords[tri] / inv_z[..., None]
        window[closer] = pix_depth[closer]
        uv_buf[y0 : y1 + 1, x0 : x1 + 1][closer] = uv[closer]

    coverage = np.isfinite(zbuf)
    pixels = np.empty((height, width, 3))
    pixels[:] = np.asarray(fill_color, dtype=np.float64)
    if coverage.any():
        rows, cols = texel_index(uv_buf[coverage], texture.size)
        pixels[coverage] = texture.texels[rows, cols]
    pose_map = PoseMap(pixels=pixels, coverage_mask=coverage, fill_color=fill_color)
    corr = SurfaceCorrespondence(surface_coords=uv_buf, silhouette=coverage)
    return pose_map, corr


def _edge(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Signed parallelogram area of (b - a) x (p - a); broadcasts over p."""
    return (b[0] - a[0]) * (p[..., 1] - a[1]) - (b[1] - a[1]) * (p[..., 0] - a[0])


def render_pose_map(
    mesh: BodyMesh,
    texture: UVTextureMap,
    camera: CameraPose,
    out_size: tuple[int, int],
    fill_color: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> PoseMap:
    """Perspective z-buffer render of the textured mesh."""
    pose_map, _ = rasterize(mesh, texture, camera, out_size, fill_color)
    return pose_map


def render_sequence(
    mesh: BodyMesh,
    texture: UVTextureMap,
    states: list[BodyModelState],
    trajectory: list[CameraPose],
    out_size: tuple[int, int],
    fill_color: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> list[PoseMap]:
    """Pose then render one frame per (state, camera) pair."""
    if len(states) != len(trajectory):
        raise ValueError(f"{len(states)} states vs {len(trajectory)} cameras")
    if not states:
        raise ValueError("empty sequence")
    return [
        render_pose_map(pose_mesh(mesh, state), texture, camera, out_size, fill_color)
        for state, camera in zip(states, trajectory)
    ]
