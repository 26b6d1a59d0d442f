"""Texture extraction and completion against exhaustive oracles."""

from __future__ import annotations

import numpy as np
import pytest
from oracle_utils import nearest_fill_oracle

from texpose.body import (
    NearestValidFill,
    SurfaceCorrespondence,
    UVTextureMap,
    complete_texture,
    extract_partial_texture,
)


def _identity_corr(h: int, w: int, silhouette: np.ndarray) -> SurfaceCorrespondence:
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    coords = np.stack([(jj + 0.5) / w, (ii + 0.5) / h], axis=-1)
    coords = np.where(silhouette[..., None], coords, np.nan)
    return SurfaceCorrespondence(surface_coords=coords, silhouette=silhouette)


def test_empty_silhouette_writes_nothing() -> None:
    corr = _identity_corr(8, 8, np.zeros((8, 8), dtype=bool))
    tex = extract_partial_texture(np.zeros((8, 8, 3)), corr, size=(8, 8))
    assert not tex.validity_mask.any()


def test_identity_correspondence_copies_pixels() -> None:
    rng = np.random.default_rng(0)
    image = rng.random((8, 8, 3))
    corr = _identity_corr(8, 8, np.ones((8, 8), dtype=bool))
    tex = extract_partial_texture(image, corr, size=(8, 8))
    assert tex.validity_mask.all()
    np.testing.assert_array_equal(tex.texels, image)


def test_last_writer_wins_row_major() -> None:
    image = np.zeros((1, 2, 3))
    image[0, 0] = [1.0, 0.0, 0.0]
    image[0, 1] = [0.0, 1.0, 0.0]
    coords = np.full((1, 2, 2), 0.1)  # both pixels hit texel (0, 0)
    corr = SurfaceCorrespondence(
        surface_coords=coords, silhouette=np.ones((1, 2), dtype=bool)
    )
    tex = extract_partial_texture(image, corr, size=(4, 4))
    np.testing.assert_array_equal(tex.texels[0, 0], [0.0, 1.0, 0.0])
    assert tex.validity_mask.sum() == 1


def test_extract_rejects_bad_inputs() -> None:
    corr = _identity_corr(4, 4, np.ones((4, 4), dtype=bool))
    with pytest.raises(ValueError):
        extract_partial_texture(np.zeros((5, 4, 3)), corr, size=(4, 4))
    bad = np.full((4, 4, 2), 1.5)
    bad_corr = SurfaceCorrespondence(
        surface_coords=bad, silhouette=np.ones((4, 4), dtype=bool)
    )
    with pytest.raises(ValueError):
        extract_partial_texture(np.zeros((4, 4, 3)), bad_corr, size=(4, 4))


def test_correspondence_null_outside_silhouette() -> None:
    coords = np.zeros((2, 2, 2))
    with pytest.raises(ValueError):
        SurfaceCorrespondence(surface_coords=coords, silhouette=np.zeros((2, 2), dtype=bool))


def test_complete_fully_valid_is_identity() -> None:
    rng = np.random.default_rng(1)
    tex = UVTextureMap(texels=rng.random((6, 6, 3)), validity_mask=np.ones((6, 6), dtype=bool))
    out = complete_texture(tex)
    np.testing.assert_array_equal(out.texels, tex.texels)


def test_single_valid_texel_floods() -> None:
    texels = np.zeros((5, 5, 3))
    texels[2, 3] = [0.25, 0.5, 0.75]
    valid = np.zeros((5, 5), dtype=bool)
    valid[2, 3] = True
    out = complete_texture(UVTextureMap(texels=texels, validity_mask=valid))
    assert out.validity_mask.all()
    np.testing.assert_array_equal(out.texels, np.broadcast_to([0.25, 0.5, 0.75], (5, 5, 3)))


def test_checkerboard_hole_matches_exhaustive_oracle() -> None:
    rng = np.random.default_rng(2)
    texels = (np.indices((16, 16)).sum(axis=0) % 2)[..., None] * np.ones(3)
    texels = texels * 0.5 + rng.random((16, 16, 3)) * 0.25
    valid = np.ones((16, 16), dtype=bool)
    valid[6:10, 6:10] = False
    masked = texels.copy()
    masked[~valid] = 0.0
    out = complete_texture(UVTextureMap(texels=masked, validity_mask=valid))
    np.testing.assert_array_equal(out.texels, nearest_fill_oracle(masked, valid))


def test_random_holes_match_oracle() -> None:
    rng = np.random.default_rng(3)
    for _ in range(3):
        texels = rng.random((12, 12, 3))
        valid = rng.random((12, 12)) > 0.4
        valid[0, 0] = True  # keep at least one valid texel
        texels[~valid] = 0.0
        out = NearestValidFill().fill(UVTextureMap(texels=texels, validity_mask=valid))
        np.testing.assert_array_equal(out.texels, nearest_fill_oracle(texels, valid))


def test_fully_invalid_rejected() -> None:
    tex = UVTextureMap(texels=np.zeros((4, 4, 3)), validity_mask=np.zeros((4, 4), dtype=bool))
    with pytest.raises(ValueError):
        complete_texture(tex)
