"""Image-quality and translation-fidelity metrics.

PSNR and SSIM follow the usual conventions on unit-range images (MAX = 1;
11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03 for SSIM), cycle
distance is the batch-averaged Euclidean norm, and manifold proximity is
a nearest-neighbor coverage probe for translated point clouds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .synth_data import GrayPatch


def _pixels(img) -> np.ndarray:
    px = img.pixels if isinstance(img, GrayPatch) else np.asarray(img, dtype=np.float64)
    return np.asarray(px, dtype=np.float64)


def psnr(ref, test) -> float:
    """Peak signal-to-noise ratio in dB; identical images give +inf."""
    a, b = _pixels(ref), _pixels(test)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


@dataclass(frozen=True)
class SSIMConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    value_range: float = 1.0


DEFAULT_SSIM = SSIMConfig()


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    size = kernel.shape[0]
    wins = np.lib.stride_tricks.sliding_window_view(img, (size, size))
    return np.tensordot(wins, kernel, axes=([2, 3], [0, 1]))


def ssim(ref, test, cfg: SSIMConfig = DEFAULT_SSIM) -> float:
    """Mean local structural similarity over Gaussian-weighted windows."""
    a, b = _pixels(ref), _pixels(test)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    if min(a.shape) < cfg.window:
        raise ValueError(f"image dims {a.shape} smaller than SSIM window {cfg.window}")
    k = _gaussian_kernel(cfg.window, cfg.sigma)
    mu_a = _windowed_mean(a, k)
    mu_b = _windowed_mean(b, k)
    var_a = _windowed_mean(a * a, k) - mu_a * mu_a
    var_b = _windowed_mean(b * b, k) - mu_b * mu_b
    cov = _windowed_mean(a * b, k) - mu_a * mu_b
    c1 = (cfg.k1 * cfg.value_range) ** 2
    c2 = (cfg.k2 * cfg.value_range) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def cycle_l2(original, reconstructed) -> float:
    """Mean Euclidean distance between matching samples of two batches."""
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(reconstructed, dtype=np.float64)
    if len(a) != len(b):
        raise ValueError(f"batch counts differ: {len(a)} vs {len(b)}")
    if a.shape != b.shape:
        raise ValueError(f"batch shapes differ: {a.shape} vs {b.shape}")
    d = (a - b).reshape(len(a), -1)
    return float(np.mean(np.linalg.norm(d, axis=1)))


def nearest_distances(samples, reference, chunk: int = 256) -> np.ndarray:
    """Distance from each sample to its nearest reference point (brute force).

    Uses explicit coordinate differences (no ||a||^2 - 2ab + ||b||^2
    shortcut), so a sample coinciding with a reference point measures an
    exact zero.
    """
    s = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    r = np.asarray(reference, dtype=np.float64).reshape(len(reference), -1)
    if len(r) == 0:
        raise ValueError("reference set must be nonempty")
    ref_chunk = max(1, (1 << 22) // max(chunk * s.shape[1], 1))
    out = np.full(len(s), np.inf)
    for i in range(0, len(s), chunk):
        blk = s[i : i + chunk]
        best = np.full(len(blk), np.inf)
        for j in range(0, len(r), ref_chunk):
            d2 = ((blk[:, None, :] - r[None, j : j + ref_chunk, :]) ** 2).sum(axis=2)
            best = np.minimum(best, d2.min(axis=1))
        out[i : i + chunk] = np.sqrt(best)
    return out


def manifold_proximity(samples, reference, radius: float) -> float:
    """Fraction of samples whose nearest reference neighbor is within radius."""
    d = nearest_distances(samples, reference)
    if len(d) == 0:
        return 0.0
    return float(np.mean(d <= radius))


@dataclass
class MetricReport:
    psnr_db: float  # +inf allowed
    ssim: float
    notes: str = ""


def save_metrics_csv(rows: list[tuple[str, MetricReport]], path: str | Path) -> None:
    """One row per (name, report); infinite PSNR is written as "inf"."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["name", "psnr_db", "ssim"])
        for name, rep in rows:
            psnr_txt = "inf" if math.isinf(rep.psnr_db) else repr(rep.psnr_db)
            wr.writerow([name, psnr_txt, repr(rep.ssim)])
