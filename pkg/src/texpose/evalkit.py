"""Frame and set-level quality metrics with report emission.

L1, PSNR, and SSIM are computed exactly as defined (no library shortcuts)
so they can be pinned against loop oracles. Distributional distance uses
the Frechet form between Gaussian fits with a pluggable embedder; the
default embedder is a seeded random projection, standing in for perceptual
networks that need pretrained weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PSNR_CAP_DB = 100.0
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    for name, arr in (("pred", pred), ("gt", gt)):
        if arr.size == 0:
            raise ValueError(f"{name} is empty")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"{name} values must lie in [0, 1]")
    return pred, gt


def l1_error(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute per-element difference."""
    pred, gt = _check_pair(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def psnr(pred: np.ndarray, gt: np.ndarray, cap: float = PSNR_CAP_DB) -> float:
    """10*log10(1/MSE) in dB, capped so identical inputs stay finite."""
    pred, gt = _check_pair(pred, gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse <= 0.0:
        return cap
    return min(cap, 10.0 * np.log10(1.0 / mse))


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Luma-weighted grayscale; accepts (H, W), (H, W, 3), or (3, H, W)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[0] == 3:
        image = np.moveaxis(image, 0, -1)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W), (H, W, 3) or (3, H, W), got {image.shape}")
    return image @ np.asarray(LUMA_WEIGHTS)


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    coords = np.arange(window) - half
    one_d = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(one_d, one_d)
    return kernel / kernel.sum()


def ssim(
    pred: np.ndarray,
    gt: np.ndarray,
    window: int = SSIM_WINDOW,
    k1: float = 0.01,
    k2: float = 0.03,
    sigma: float = SSIM_SIGMA,
) -> float:
    """Mean local structural similarity over Gaussian-weighted windows.

    Inputs are converted to grayscale first; the dynamic range is fixed at
    1. Windows are fully interior (no padding), so both dimensions must be
    at least the window size.
    """
    pred, gt = _check_pair(pred, gt)
    x = to_grayscale(pred)
    y = to_grayscale(gt)
    if min(x.shape) < window:
        raise ValueError(f"image {x.shape} smaller than SSIM window {window}")
    kernel = _gaussian_kernel(window, sigma)

    def _local(values: np.ndarray) -> np.ndarray:
        tiles = np.lib.stride_tricks.sliding_window_view(values, (window, window))
        return np.tensordot(tiles, kernel, axes=([2, 3], [0, 1]))

    mu_x = _local(x)
    mu_y = _local(y)
    var_x = _local(x * x) - mu_x**2
    var_y = _local(y * y) - mu_y**2
    cov = _local(x * y) - mu_x * mu_y
    c1 = k1**2
    c2 = k2**2
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(score.mean())


class RandomProjectionEmbedder:
    """Fixed seeded linear projection of flattened samples.

    A stand-in feature extractor: deterministic, input-size adaptive, and
    cheap, which is all the Frechet machinery needs for verification.
    """

    def __init__(self, dim: int = 8, seed: int = 0):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        self._projections: dict[int, np.ndarray] = {}

    def __call__(self, samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim < 2:
            raise ValueError(f"expected (N, ...) samples, got shape {samples.shape}")
        flat = samples.reshape(samples.shape[0], -1)
        width = flat.shape[1]
        if width not in self._projections:
            rng = np.random.default_rng((self.seed, width))
            self._projections[width] = rng.standard_normal((width, self.dim)) / np.sqrt(width)
        return flat @ self._projections[width]


def _gaussian_fit(embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = embeddings.mean(axis=0)
    cov = np.atleast_2d(np.cov(embeddings, rowvar=False))
    return mu, cov


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    values = np.clip(values, 0.0, None)
    return (vectors * np.sqrt(values)) @ vectors.T


def feature_distance(pred_set: np.ndarray, gt_set: np.ndarray, embedder) -> float:
    """Frechet distance between Gaussian fits of embedded sample sets.

    ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)), with the cross term
    evaluated in the symmetric form sqrt(sqrt(S1) S2 sqrt(S1)) so only
    PSD square roots are ever taken.
    """
    pred_emb = np.asarray(embedder(pred_set), dtype=np.float64)
    gt_emb = np.asarray(embedder(gt_set), dtype=np.float64)
    for name, emb in (("pred_set", pred_emb), ("gt_set", gt_emb)):
        if emb.ndim != 2 or emb.shape[0] < 2:
            raise ValueError(f"{name} must embed to (N >= 2, d), got {emb.shape}")
    mu1, cov1 = _gaussian_fit(pred_emb)
    mu2, cov2 = _gaussian_fit(gt_emb)
    root1 = _psd_sqrt(cov1)
    cross = _psd_sqrt(root1 @ cov2 @ root1)
    value = float(
        np.sum((mu1 - mu2) ** 2) + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross)
    )
    return max(value, 0.0)


@dataclass(frozen=True)
class MetricReport:
    """Per-frame scores plus aggregate means for one clip.

    Slots for metrics that need pretrained perceptual networks stay None
    and are emitted as nulls.
    """

    clip_id: str
    l1_per_frame: tuple[float, ...]
    psnr_per_frame: tuple[float, ...]
    ssim_per_frame: tuple[float, ...]
    lpips: float | None = None
    fid_vid: float | None = None
    fvd: float | None = None

    def __post_init__(self) -> None:
        n = len(self.l1_per_frame)
        if n == 0:
            raise ValueError("report needs at least one frame")
        if len(self.psnr_per_frame) != n or len(self.ssim_per_frame) != n:
            raise ValueError("per-frame metric lists disagree on length")

    @property
    def l1_mean(self) -> float:
        return float(np.mean(self.l1_per_frame))

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self.psnr_per_frame))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim_per_frame))


def evaluate_frames(pred: np.ndarray, gt: np.ndarray, clip_id: str = "clip") -> MetricReport:
    """Score a (N, 3, H, W) prediction stack against ground truth."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) stacks, got {pred.shape}")
    return MetricReport(
        clip_id=clip_id,
        l1_per_frame=tuple(l1_error(p, g) for p, g in zip(pred, gt)),
        psnr_per_frame=tuple(psnr(p, g) for p, g in zip(pred, gt)),
        ssim_per_frame=tuple(ssim(p, g) for p, g in zip(pred, gt)),
    )


def write_report(report: MetricReport, path: str | Path) -> None:
    """Emit per-frame records then a summary row in Table column order."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, (l1, ps, ss) in enumerate(
            zip(report.l1_per_frame, report.psnr_per_frame, report.ssim_per_frame)
        ):
            fh.write(
                json.dumps({"kind": "frame", "clip_id": report.clip_id, "frame": i,
                            "l1": l1, "psnr": ps, "ssim": ss}) + "\n"
            )
        fh.write(
            json.dumps(
                {
                    "kind": "summary",
                    "clip_id": report.clip_id,
                    "l1": report.l1_mean,
                    "psnr": report.psnr_mean,
                    "ssim": report.ssim_mean,
                    "lpips": report.lpips,
                    "fid_vid": report.fid_vid,
                    "fvd": report.fvd,
                }
            )
            + "\n"
        )


def read_report(path: str | Path) -> list[dict]:
    """Parse a report file back into its records."""
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines()]
