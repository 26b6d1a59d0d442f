"""UV texture maps: extraction from images and hole completion.

Extraction scatters reference-image pixels into texel bins through a
pixel-to-surface correspondence; completion fills the unseen texels.
Completion sits behind a small interface so the deterministic
nearest-valid fill can later be swapped for a learned in-painter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np


@dataclass(frozen=True)
class UVTextureMap:
    """Texel grid in [0, 1] colors; validity_mask False marks holes."""

    texels: np.ndarray
    validity_mask: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "texels", np.asarray(self.texels, dtype=np.float64))
        object.__setattr__(self, "validity_mask", np.asarray(self.validity_mask, dtype=bool))
        if self.texels.ndim != 3 or self.texels.shape[2] != 3:
            raise ValueError(f"texels must be (H, W, 3), got {self.texels.shape}")
        if self.validity_mask.shape != self.texels.shape[:2]:
            raise ValueError("validity_mask shape must match texel grid")
        if self.texels.min(initial=0.0) < 0.0 or self.texels.max(initial=0.0) > 1.0:
            raise ValueError("texel values must lie in [0, 1]")

    @property
    def size(self) -> tuple[int, int]:
        return self.texels.shape[0], self.texels.shape[1]


@dataclass(frozen=True)
class SurfaceCorrespondence:
    """Per-pixel surface UV (NaN off-body) plus the body silhouette."""

    surface_coords: np.ndarray
    silhouette: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "surface_coords", np.asarray(self.surface_coords, dtype=np.float64))
        object.__setattr__(self, "silhouette", np.asarray(self.silhouette, dtype=bool))
        if self.surface_coords.ndim != 3 or self.surface_coords.shape[2] != 2:
            raise ValueError(f"surface_coords must be (H, W, 2), got {self.surface_coords.shape}")
        if self.silhouette.shape != self.surface_coords.shape[:2]:
            raise ValueError("silhouette shape must match surface_coords")
        inside = np.isfinite(self.surface_coords).all(axis=2)
        if (inside & ~self.silhouette).any():
            raise ValueError("surface coords must be null outside the silhouette")
        if (self.silhouette & ~inside).any():
            raise ValueError("surface coords must be finite inside the silhouette")


def texel_index(coords: np.ndarray, size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-texel bins for UV coords in [0, 1]^2.

    u indexes columns, v indexes rows; u == 1.0 clamps into the last bin.
    The same binning is used by extraction and by the renderer's texture
    lookup, which is what makes the render/extract round trip exact.
    """
    h, w = size
    coords = np.asarray(coords, dtype=np.float64)
    cols = np.clip(np.floor(coords[..., 0] * w).astype(np.int64), 0, w - 1)
    rows = np.clip(np.floor(coords[..., 1] * h).astype(np.int64), 0, h - 1)
    return rows, cols


def extract_partial_texture(
    image: np.ndarray, corr: SurfaceCorrespondence, size: tuple[int, int] = (64, 64)
) -> UVTextureMap:
    """Scatter silhouette pixels into texel bins.

    When several pixels land in one texel the last one in row-major pixel
    order wins. Texels that receive nothing are marked invalid.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] < 3:
        raise ValueError(f"image must be (H, W, 3+), got {image.shape}")
    if image.shape[:2] != corr.silhouette.shape:
        raise ValueError(
            f"image {image.shape[:2]} and correspondence {corr.silhouette.shape} differ"
        )
    h, w = size
    texels = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    ys, xs = np.nonzero(corr.silhouette)  # row-major order
    if ys.size == 0:
        return UVTextureMap(texels=texels, validity_mask=valid)
    coords = corr.surface_coords[ys, xs]
    if coords.min() < 0.0 or coords.max() > 1.0:
        raise ValueError("surface coordinates outside [0, 1]^2")
    rows, cols = texel_index(coords, size)
    # Last-writer-wins: first occurrence in the reversed stream is the last
    # pixel in row-major order.
    flat = (rows * w + cols)[::-1]
    uniq, first_rev = np.unique(flat, return_index=True)
    writer = ys.size - 1 - first_rev
    texels.reshape(-1, 3)[uniq] = image[ys[writer], xs[writer], :3]
    valid.reshape(-1)[uniq] = True
    return UVTextureMap(texels=texels, validity_mask=valid)


class CompletionMethod(Protocol):
    """Fills the holes of a partial texture; must preserve valid texels."""

    def fill(self, partial: UVTextureMap) -> UVTextureMap: ...


class NearestValidFill:
    """Copy each hole from its nearest valid texel.

    Distance is Euclidean on the texel grid; ties go to the smaller row,
    then the smaller column. Exhaustive but vectorized; fine at the texture
    sizes used here.
    """

    _CHUNK = 1024

    def fill(self, partial: UVTextureMap) -> UVTextureMap:
        valid = partial.validity_mask
        if valid.all():
            return partial
        h, w = partial.size
        vr, vc = np.nonzero(valid)
        hr, hc = np.nonzero(~valid)
        # Lexicographic (distance^2, row, col) packed into one integer key.
        order = vr * w + vc
        filled = partial.texels.copy()
        for start in range(0, hr.size, self._CHUNK):
            rows = hr[start : start + self._CHUNK]
            cols = hc[start : start + self._CHUNK]
            d2 = (rows[:, None] - vr[None, :]) ** 2 + (cols[:, None] - vc[None, :]) ** 2
            best = np.argmin(d2 * (h * w) + order[None, :], axis=1)
            filled[rows, cols] = partial.texels[vr[best], vc[best]]
        return UVTextureMap(texels=filled, validity_mask=np.ones((h, w), dtype=bool))


def complete_texture(partial: UVTextureMap, method: CompletionMethod | None = None) -> UVTextureMap:
    """Fill every hole of ``partial`` with the given method (nearest-valid
    by default). Valid input texels are preserved bit-exactly."""
    if not partial.validity_mask.any():
        raise ValueError("cannot complete a texture with no valid texels")
    out = (method or NearestValidFill()).fill(partial)
    if not out.validity_mask.all():
        raise ValueError("completion method left holes")
    if not np.array_equal(
        out.texels[partial.validity_mask], partial.texels[partial.validity_mask]
    ):
        raise ValueError("completion method altered valid texels")
    return out
