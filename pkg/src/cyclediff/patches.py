"""Sub-window / slide-window tiling and overlap-averaged stitching.

Large images are cut into model-sized windows, translated patch by patch,
and recombined: every output pixel is the unweighted mean of all patch
values covering it.  Both tilings cover every source pixel at least once,
so stitching unmodified patches reproduces the input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .synth_data import GrayPatch, load_patch, save_patch


def _as_array(image) -> np.ndarray:
    px = image.pixels if isinstance(image, GrayPatch) else np.asarray(image, dtype=np.float64)
    if px.ndim != 2:
        raise ConfigError(f"image must be 2D, got shape {px.shape}")
    return np.asarray(px, dtype=np.float64)


@dataclass
class PatchGrid:
    """Window-sized patches plus the placement needed to re-stitch them.

    origins are top-left (row, col) in source coordinates.  Sub-window
    grids may extend past the bottom/right edge; the overhang (recorded in
    pad) holds reflected pixels and is cropped away on stitching.
    """

    patches: list[np.ndarray]
    origins: list[tuple[int, int]]
    window: tuple[int, int]
    stride: tuple[int, int]
    source_dims: tuple[int, int]
    pad: tuple[int, int] = (0, 0)

    def __post_init__(self):
        h, w = self.window
        H, W = self.source_dims
        if len(self.patches) != len(self.origins):
            raise ConfigError("patches and origins must have equal length")
        for p in self.patches:
            if p.shape != (h, w):
                raise ConfigError(f"every patch must be {h}x{w}, got {p.shape}")
        for r, c in self.origins:
            if r < 0 or c < 0 or r + h > H + self.pad[0] or c + w > W + self.pad[1]:
                raise ConfigError(f"patch at ({r}, {c}) does not fit the padded source")

    def __len__(self) -> int:
        return len(self.patches)

    def coverage(self) -> np.ndarray:
        """Per-pixel count of covering patches (cropped to source dims)."""
        H, W = self.source_dims
        cnt = np.zeros((H, W), dtype=np.int64)
        h, w = self.window
        for r, c in self.origins:
            cnt[r : min(r + h, H), c : min(c + w, W)] += 1
        return cnt

    def with_patches(self, patches: list[np.ndarray]) -> "PatchGrid":
        """Same geometry, new patch contents (e.g. after translation)."""
        return PatchGrid(
            patches=[np.asarray(p, dtype=np.float64) for p in patches],
            origins=list(self.origins),
            window=self.window,
            stride=self.stride,
            source_dims=self.source_dims,
            pad=self.pad,
        )


def _axis_origins_tiled(dim: int, win: int) -> list[int]:
    n = -(-dim // win)  # ceil
    return [i * win for i in range(n)]


def _axis_origins_slide(dim: int, win: int, stride: int) -> list[int]:
    origins = list(range(0, dim - win + 1, stride))
    if origins[-1] != dim - win:
        origins.append(dim - win)
    return origins


def sub_window(image, window) -> PatchGrid:
    """Non-overlapping tiling; ragged edges are reflection-padded."""
    img = _as_array(image)
    H, W = img.shape
    h, w = (window, window) if np.isscalar(window) else tuple(window)
    if h > H or w > W:
        raise ConfigError(f"window {h}x{w} larger than image {H}x{W}")
    rows = _axis_origins_tiled(H, h)
    cols = _axis_origins_tiled(W, w)
    pad_h = rows[-1] + h - H
    pad_w = cols[-1] + w - W
    padded = np.pad(img, ((0, pad_h), (0, pad_w)), mode="reflect") if (pad_h or pad_w) else img
    patches = [padded[r : r + h, c : c + w].copy() for r in rows for c in cols]
    origins = [(r, c) for r in rows for c in cols]
    return PatchGrid(patches, origins, (h, w), (h, w), (H, W), (pad_h, pad_w))


def slide_window(image, window, stride) -> PatchGrid:
    """Overlapping tiling with the final origins clamped to the image edge."""
    img = _as_array(image)
    H, W = img.shape
    h, w = (window, window) if np.isscalar(window) else tuple(window)
    sh, sw = (stride, stride) if np.isscalar(stride) else tuple(stride)
    if sh < 1 or sw < 1:
        raise ConfigError(f"stride must be >= 1, got ({sh}, {sw})")
    if sh > h or sw > w:
        raise ConfigError(f"stride ({sh}, {sw}) larger than window ({h}, {w}) breaks coverage")
    if h > H or w > W:
        raise ConfigError(f"window {h}x{w} larger than image {H}x{W}")
    rows = _axis_origins_slide(H, h, sh)
    cols = _axis_origins_slide(W, w, sw)
    patches = [img[r : r + h, c : c + w].copy() for r in rows for c in cols]
    origins = [(r, c) for r in rows for c in cols]
    return PatchGrid(patches, origins, (h, w), (sh, sw), (H, W))


def stitch(grid: PatchGrid) -> np.ndarray:
    """Overlap-average the grid back into a source-sized image.

    Accumulation order is the grid order, so results are run-to-run
    identical; pixels covered exactly once come back bit-exact.
    """
    H, W = grid.source_dims
    h, w = grid.window
    acc = np.zeros((H, W), dtype=np.float64)
    cnt = np.zeros((H, W), dtype=np.int64)
    for patch, (r, c) in zip(grid.patches, grid.origins):
        he = min(r + h, H) - r
        we = min(c + w, W) - c
        acc[r : r + he, c : c + we] += patch[:he, :we]
        cnt[r : r + he, c : c + we] += 1
    if cnt.min() < 1:
        raise RuntimeError("internal error: stitching found an uncovered pixel")
    return acc / cnt


# ---------------------------------------------------------------------------
# Out-of-process workflow: manifest CSV + one image file per patch
# ---------------------------------------------------------------------------

_MANIFEST = "manifest.csv"


def save_grid(grid: PatchGrid, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / _MANIFEST, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["patch_index", "row", "col", "h", "w"])
        for i, (r, c) in enumerate(grid.origins):
            wr.writerow([i, r, c, grid.window[0], grid.window[1]])
    for i, patch in enumerate(grid.patches):
        save_patch(GrayPatch(np.clip(patch, 0.0, 1.0)), directory / f"patch_{i:05d}.pgm")


def load_manifest(directory: str | Path) -> list[tuple[int, int, int, int, int]]:
    rows = []
    with open(Path(directory) / _MANIFEST, newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for row in rd:
            rows.append(tuple(int(v) for v in row))
    return rows


def replace_patches(grid: PatchGrid, directory: str | Path) -> PatchGrid:
    """Reload (translated) patch files into a grid with known geometry."""
    directory = Path(directory)
    patches = [
        load_patch(directory / f"patch_{i:05d}.pgm").pixels for i in range(len(grid))
    ]
    return grid.with_patches(patches)
