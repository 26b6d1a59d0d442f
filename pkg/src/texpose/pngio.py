"""8-bit PNG helpers used across the package.

All in-memory images are float arrays in [0, 1], channel-last. Files are
8-bit PNG; values quantize as round(x * 255), so a save/load round trip
moves a value by at most 1/255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Save a float image in [0, 1] as 8-bit PNG.

    Accepts (H, W) grayscale, (H, W, 3) RGB or (H, W, 4) RGBA.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValueError(f"expected 2-D or 3-D image, got shape {arr.shape}")
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def load_image(path: str | Path) -> np.ndarray:
    """Load a PNG as float32 in [0, 1], preserving its channel count."""
    with Image.open(path) as img:
        data = np.asarray(img)
    return data.astype(np.float32) / 255.0


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    """Save a binary (H, W) mask as an 8-bit grayscale PNG (0 or 255)."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D mask, got shape {arr.shape}")
    Image.fromarray(np.where(arr > 0.5, 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG"
    )


def load_mask(path: str | Path) -> np.ndarray:
    """Load a mask PNG as a float32 array of exact 0.0 / 1.0 values."""
    with Image.open(path) as img:
        data = np.asarray(img.convert("L"))
    return (data > 127).astype(np.float32)
