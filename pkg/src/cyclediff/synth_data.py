"""Synthetic 2D point domains and document-like grayscale patches.

Six 2D shape families (two moons, checkerboard, concentric rings/squares,
parallel rings/squares) with stable per-point identity labels, plus a
stroke-patch renderer and a speckle/Gaussian degradation for the document
experiments.  All generators are pure functions of an explicit seed.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, NumericError

# Below this size the empirical covariance of a sampled set is unreliable,
# so datasets are whitened with the generator's analytic moments instead.
_EMPIRICAL_WHITEN_MIN = 256


class Domain(str, enum.Enum):
    """The six 2D shape families."""

    TM = "tm"  # two moons
    CB = "cb"  # checkerboard
    CR = "cr"  # concentric rings
    CS = "cs"  # concentric squares
    PR = "pr"  # parallel rings
    PS = "ps"  # parallel squares


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape parameters for the 2D generators.

    The shape counts and jitter widths are deliberately configurable; the
    defaults are: moons of radius 1 with the classic (1, -0.5) offset,
    a 4x4 checkerboard on [-2, 2]^2, three concentric radii/half-sides
    {0.5, 1.0, 1.5}, and three parallel shapes of size 0.5 spaced 2 apart.
    """

    jitter: float = 0.05
    radii: tuple[float, ...] = (0.5, 1.0, 1.5)
    board_cells: int = 4
    board_extent: float = 2.0
    n_parallel: int = 3
    parallel_size: float = 0.5
    parallel_spacing: float = 2.0


DEFAULT_GENERATOR_CONFIG = GeneratorConfig()


@dataclass
class PointSet:
    """A labelled 2D point cloud.

    points: (n, 2) float64.  labels: (n,) integer identity index, assigned
    by pre-whitening region (per moon, per ring, per cell, ...) so the
    colour of a point survives any affine normalization.
    """

    points: np.ndarray
    labels: np.ndarray
    domain_name: Domain

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError(f"points must be (n, 2), got {self.points.shape}")
        if len(self.points) != len(self.labels):
            raise ValueError("points and labels must have equal length")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class AffineWhitener:
    """Affine map x -> transform @ (x - mean) with invertible transform."""

    mean: np.ndarray
    transform: np.ndarray  # inverse Cholesky factor of the fitted covariance

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.mean) @ self.transform.T

    def invert(self, points: np.ndarray) -> np.ndarray:
        inv = np.linalg.inv(self.transform)
        return np.asarray(points, dtype=np.float64) @ inv.T + self.mean


def whitener_from_moments(mean: np.ndarray, cov: np.ndarray) -> AffineWhitener:
    """Build a whitener from explicit first/second moments.

    The transform is the inverse of the lower Cholesky factor of cov,
    which is deterministic and sign-unambiguous (unlike an eigenbasis).
    """
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cond = float(np.linalg.cond(cov))
        raise NumericError(
            f"covariance is not positive definite (condition number {cond:.3e})"
        ) from None
    cond = float(np.linalg.cond(cov))
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericError(f"covariance is numerically singular (condition number {cond:.3e})")
    transform = np.linalg.inv(chol)
    return AffineWhitener(mean=mean, transform=transform)


def whiten(raw: PointSet) -> tuple[PointSet, AffineWhitener]:
    """Normalize a point set to zero mean and identity covariance.

    Fits population moments (1/n) on the input, so re-measuring the output
    with the same convention returns exactly zero mean / identity up to
    float rounding.  Requires >= 3 points and a non-degenerate covariance.
    """
    pts = raw.points
    if len(pts) < 3:
        raise NumericError(f"need >= 3 points to fit a covariance, got {len(pts)}")
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / len(pts)
    w = whitener_from_moments(mean, cov)
    return PointSet(w.apply(pts), raw.labels.copy(), raw.domain_name), w


# ---------------------------------------------------------------------------
# Raw (pre-whitening) generators.  Each returns (points, labels).
# ---------------------------------------------------------------------------


def _raw_two_moons(n, rng, cfg):
    moon = rng.integers(0, 2, size=n)
    t = rng.uniform(0.0, math.pi, size=n)
    x = np.where(moon == 0, np.cos(t), 1.0 - np.cos(t))
    y = np.where(moon == 0, np.sin(t), 0.5 - np.sin(t))
    pts = np.stack([x, y], axis=1) + rng.normal(0.0, cfg.jitter, size=(n, 2))
    return pts, moon


def _board_cells(cfg):
    # centres of the "black" cells (i + j even), row-major enumeration
    k = cfg.board_cells
    size = 2.0 * cfg.board_extent / k
    centres = [
        (-cfg.board_extent + (i + 0.5) * size, -cfg.board_extent + (j + 0.5) * size)
        for i in range(k)
        for j in range(k)
        if (i + j) % 2 == 0
    ]
    return np.asarray(centres), size


def _raw_checkerboard(n, rng, cfg):
    centres, size = _board_cells(cfg)
    cell = rng.integers(0, len(centres), size=n)
    pts = centres[cell] + rng.uniform(-size / 2, size / 2, size=(n, 2))
    return pts, cell


def _raw_concentric_rings(n, rng, cfg):
    radii = np.asarray(cfg.radii, dtype=np.float64)
    probs = radii / radii.sum()  # uniform along total arc length
    ring = rng.choice(len(radii), size=n, p=probs)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    r = radii[ring] + rng.normal(0.0, cfg.jitter, size=n)
    pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return pts, ring


def _square_outline(u, half_side):
    """Map u in [0, 1) along the perimeter of a centred square: (point, outward normal)."""
    a = half_side
    s = np.asarray(u) * 8.0 * a  # total perimeter 8a
    edge = np.minimum((s // (2.0 * a)).astype(np.int64), 3)
    w = s - edge * 2.0 * a  # position within the edge, in [0, 2a)
    x = np.empty_like(s)
    y = np.empty_like(s)
    nx = np.zeros_like(s)
    ny = np.zeros_like(s)
    for e, (px, py, dx, dy, nxe, nye) in enumerate(
        [
            (-a, -a, 1.0, 0.0, 0.0, -1.0),  # bottom, left -> right
            (a, -a, 0.0, 1.0, 1.0, 0.0),  # right, bottom -> top
            (a, a, -1.0, 0.0, 0.0, 1.0),  # top, right -> left
            (-a, a, 0.0, -1.0, -1.0, 0.0),  # left, top -> bottom
        ]
    ):
        m = edge == e
        x[m] = px + dx * w[m]
        y[m] = py + dy * w[m]
        nx[m] = nxe
        ny[m] = nye
    return np.stack([x, y], axis=1), np.stack([nx, ny], axis=1)


def _raw_concentric_squares(n, rng, cfg):
    sides = np.asarray(cfg.radii, dtype=np.float64)  # half-sides
    probs = sides / sides.sum()
    sq = rng.choice(len(sides), size=n, p=probs)
    u = rng.uniform(0.0, 1.0, size=n)
    pts = np.empty((n, 2))
    normals = np.empty((n, 2))
    for k, a in enumerate(sides):
        m = sq == k
        pts[m], normals[m] = _square_outline(u[m], a)
    pts = pts + normals * rng.normal(0.0, cfg.jitter, size=n)[:, None]
    return pts, sq


def _parallel_centres(cfg):
    m = cfg.n_parallel
    xs = (np.arange(m) - (m - 1) / 2.0) * cfg.parallel_spacing
    return np.stack([xs, np.zeros(m)], axis=1)


def _raw_parallel_rings(n, rng, cfg):
    centres = _parallel_centres(cfg)
    shape = rng.integers(0, len(centres), size=n)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    r = cfg.parallel_size + rng.normal(0.0, cfg.jitter, size=n)
    pts = centres[shape] + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return pts, shape


def _raw_parallel_squares(n, rng, cfg):
    centres = _parallel_centres(cfg)
    shape = rng.integers(0, len(centres), size=n)
    u = rng.uniform(0.0, 1.0, size=n)
    pts, normals = _square_outline(u, cfg.parallel_size)
    pts = pts + normals * rng.normal(0.0, cfg.jitter, size=n)[:, None]
    return centres[shape] + pts, shape


_GENERATORS = {
    Domain.TM: _raw_two_moons,
    Domain.CB: _raw_checkerboard,
    Domain.CR: _raw_concentric_rings,
    Domain.CS: _raw_concentric_squares,
    Domain.PR: _raw_parallel_rings,
    Domain.PS: _raw_parallel_squares,
}


# ---------------------------------------------------------------------------
# Analytic moments of each pre-whitening distribution.  Used to whiten tiny
# samples (below _EMPIRICAL_WHITEN_MIN) where empirical moments degenerate.
# ---------------------------------------------------------------------------


def reference_moments(kind: Domain, cfg: GeneratorConfig = DEFAULT_GENERATOR_CONFIG):
    """Exact mean and covariance of a generator's sampling distribution."""
    s2 = cfg.jitter**2
    if kind == Domain.TM:
        # mixture of the two half-circle curves; isotropic jitter adds s2*I
        mean = np.array([0.5, 0.25])
        exx = 1.0
        eyy = 0.625 - 1.0 / math.pi
        exy = 0.25 - 1.0 / math.pi
        cov = np.array([[exx, exy], [exy, eyy]]) - np.outer(mean, mean) + s2 * np.eye(2)
        return mean, cov
    if kind == Domain.CB:
        centres, size = _board_cells(cfg)
        mean = centres.mean(axis=0)
        c = centres - mean
        cov = c.T @ c / len(c) + (size**2 / 12.0) * np.eye(2)
        return mean, cov
    if kind == Domain.CR:
        radii = np.asarray(cfg.radii)
        w = radii / radii.sum()
        v = float((w * (radii**2 + s2)).sum()) / 2.0
        return np.zeros(2), v * np.eye(2)
    if kind == Domain.CS:
        sides = np.asarray(cfg.radii)
        w = sides / sides.sum()
        # outline of a centred square, perimeter-uniform: E[x^2] = (2/3) a^2;
        # normal jitter splits half/half between the axes
        v = float((w * ((2.0 / 3.0) * sides**2 + s2 / 2.0)).sum())
        return np.zeros(2), v * np.eye(2)
    if kind == Domain.PR:
        centres = _parallel_centres(cfg)
        cvar = centres.T @ centres / len(centres)
        ring = (cfg.parallel_size**2 + s2) / 2.0
        return np.zeros(2), cvar + ring * np.eye(2)
    if kind == Domain.PS:
        centres = _parallel_centres(cfg)
        cvar = centres.T @ centres / len(centres)
        sq = (2.0 / 3.0) * cfg.parallel_size**2 + s2 / 2.0
        return np.zeros(2), cvar + sq * np.eye(2)
    raise ConfigError(f"unknown domain kind: {kind!r}")


def make_dataset(
    kind: Domain | str,
    n: int,
    seed: int,
    cfg: GeneratorConfig = DEFAULT_GENERATOR_CONFIG,
) -> PointSet:
    """Sample n whitened points from the named shape family.

    Sets of >= 256 points are whitened with their own empirical moments
    (making the normalization exact on the returned set); smaller sets use
    the generator's analytic moments so even n=1 stays well-defined.
    """
    try:
        kind = Domain(kind)
    except ValueError:
        raise ConfigError(f"unknown domain kind: {kind!r}") from None
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    pts, labels = _GENERATORS[kind](n, rng, cfg)
    raw = PointSet(pts, labels, kind)
    if n >= _EMPIRICAL_WHITEN_MIN:
        white, _ = whiten(raw)
        return white
    w = whitener_from_moments(*reference_moments(kind, cfg))
    return PointSet(w.apply(pts), raw.labels, kind)


# ---------------------------------------------------------------------------
# PointSet CSV round trip (columns x, y, label; full float precision)
# ---------------------------------------------------------------------------


def save_pointset_csv(ps: PointSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "label"])
        for (x, y), lab in zip(ps.points, ps.labels):
            wr.writerow([repr(float(x)), repr(float(y)), int(lab)])


def load_pointset_csv(path: str | Path, domain: Domain | str = Domain.TM) -> PointSet:
    pts, labels = [], []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:2] != ["x", "y"]:
            raise FormatError(f"unexpected CSV header {header!r} in {path}")
        for row in rd:
            pts.append((float(row[0]), float(row[1])))
            labels.append(int(row[2]) if len(row) > 2 else 0)
    pts_arr = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    return PointSet(pts_arr, np.asarray(labels, dtype=np.int64), Domain(domain))


# ---------------------------------------------------------------------------
# Grayscale patches: stroke rendering, degradation, image files
# ---------------------------------------------------------------------------


@dataclass
class GrayPatch:
    """A grayscale image patch with scalar pixels, nominally in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError(f"pixels must be 2D, got shape {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class StrokeConfig:
    """Controls for the random stroke renderer."""

    min_strokes: int = 0
    max_strokes: int = 256
    thickness: tuple[int, int] = (1, 2)
    ink_low: float = 0.0
    ink_high: float = 0.15
    arc_fraction: float = 0.4  # fraction of strokes drawn as arcs


DEFAULT_STROKE_CONFIG = StrokeConfig()


def _stamp(canvas: np.ndarray, ys: np.ndarray, xs: np.ndarray, radius: int, value: float):
    h, w = canvas.shape
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy * dy + dx * dx > radius * radius:
                continue
            yy = ys + dy
            xx = xs + dx
            m = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            canvas[yy[m], xx[m]] = value


def render_strokes(
    seed: int,
    h: int,
    w: int,
    density: float,
    cfg: StrokeConfig = DEFAULT_STROKE_CONFIG,
) -> GrayPatch:
    """Render dark random line/arc strokes on a white canvas.

    Strokes are added until the fraction of dark pixels reaches `density`
    (or max_strokes is hit), so the achieved ink fraction lands at or just
    above the target.  Deterministic for a fixed seed.
    """
    if h < 8 or w < 8:
        raise ConfigError(f"patch dims must be >= 8, got {h}x{w}")
    if not (0.0 <= density < 1.0):
        raise ConfigError(f"density must be in [0, 1), got {density}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    canvas = np.ones((h, w), dtype=np.float64)
    target = density * h * w
    n_strokes = 0
    while n_strokes < cfg.max_strokes and (
        n_strokes < cfg.min_strokes or (target > 0 and np.count_nonzero(canvas < 0.5) < target)
    ):
        ink = rng.uniform(cfg.ink_low, cfg.ink_high)
        radius = int(rng.integers(cfg.thickness[0], cfg.thickness[1] + 1)) // 2
        if rng.uniform() < cfg.arc_fraction:
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(min(h, w) / 8.0, min(h, w) / 2.0)
            a0 = rng.uniform(0, 2 * math.pi)
            span = rng.uniform(math.pi / 4, 1.5 * math.pi)
            m = max(int(r * span * 3), 2)
            ang = np.linspace(a0, a0 + span, m)
            ys = np.round(cy + r * np.sin(ang)).astype(np.int64)
            xs = np.round(cx + r * np.cos(ang)).astype(np.int64)
        else:
            y0, x0 = rng.uniform(0, h), rng.uniform(0, w)
            y1, x1 = rng.uniform(0, h), rng.uniform(0, w)
            m = max(int(math.hypot(y1 - y0, x1 - x0) * 3), 2)
            ts = np.linspace(0.0, 1.0, m)
            ys = np.round(y0 + ts * (y1 - y0)).astype(np.int64)
            xs = np.round(x0 + ts * (x1 - x0)).astype(np.int64)
        _stamp(canvas, ys, xs, radius, ink)
        n_strokes += 1
    return GrayPatch(canvas)


@dataclass(frozen=True)
class DegradeConfig:
    """Noise levels on the internal [0, 1] intensity scale.

    The document-noise convention of "sigma = 5" on 8-bit images maps to
    5/255 here; the CLI does that rescaling when parsing `--noise`.
    """

    gaussian_sigma: float = 0.0
    speckle_sigma: float = 0.0
    seed: int = 0


def degrade(clean: GrayPatch, cfg: DegradeConfig) -> GrayPatch:
    """Apply multiplicative speckle and additive Gaussian noise, then clamp.

    out = clamp(clean * (1 + eta) + eps) with eta ~ N(0, speckle^2) and
    eps ~ N(0, gaussian^2), drawn elementwise in that order.
    """
    if cfg.gaussian_sigma < 0 or cfg.speckle_sigma < 0:
        raise ConfigError("noise sigmas must be >= 0")
    px = clean.pixels
    if cfg.gaussian_sigma == 0 and cfg.speckle_sigma == 0:
        return GrayPatch(px.copy())
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    out = px.copy()
    if cfg.speckle_sigma > 0:
        out = out * (1.0 + rng.normal(0.0, cfg.speckle_sigma, size=px.shape))
    if cfg.gaussian_sigma > 0:
        out = out + rng.normal(0.0, cfg.gaussian_sigma, size=px.shape)
    return GrayPatch(np.clip(out, 0.0, 1.0))


def save_patch(patch: GrayPatch, path: str | Path) -> None:
    """Write an 8-bit PGM (native) or PNG (via Pillow) image."""
    path = Path(path)
    q = np.clip(np.round(patch.pixels * 255.0), 0, 255).astype(np.uint8)
    if path.suffix.lower() == ".pgm":
        with open(path, "wb") as fh:
            fh.write(f"P5\n{q.shape[1]} {q.shape[0]}\n255\n".encode("ascii"))
            fh.write(q.tobytes())
    elif path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(q, mode="L").save(path)
    else:
        raise ConfigError(f"unsupported image extension: {path.suffix!r}")


def load_patch(path: str | Path) -> GrayPatch:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        with open(path, "rb") as fh:
            data = fh.read()
        fields = []
        pos = 0
        while len(fields) < 4:  # magic, width, height, maxval
            while pos < len(data) and data[pos : pos + 1].isspace():
                pos += 1
            if data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
                continue
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            fields.append(data[start:pos])
        pos += 1  # single whitespace after maxval
        if fields[0] != b"P5" or fields[3] != b"255":
            raise FormatError(f"not an 8-bit P5 PGM: {path}")
        w, h = int(fields[1]), int(fields[2])
        raw = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=pos)
        return GrayPatch(raw.reshape(h, w).astype(np.float64) / 255.0)
    if path.suffix.lower() == ".png":
        from PIL import Image

        arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64)
        return GrayPatch(arr / 255.0)
    raise ConfigError(f"unsupported image extension: {path.suffix!r}")
