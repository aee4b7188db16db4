"""Time-conditioned MLP noise predictor with hand-rolled backprop.

The network maps (sample, timestep) -> predicted noise.  The timestep is
encoded with a sinusoidal embedding (continuous in t) and concatenated to
the flattened sample.  Parameters live in one flat float64 vector, which
keeps optimizer state, gradient clipping, serialization, and
finite-difference checks trivial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArchConfig:
    """Network hyperparameters.

    input_dim: flattened sample dimensionality.
    hidden: widths of the hidden layers.
    time_embed_dim: sinusoidal embedding width (even).
    """

    input_dim: int
    hidden: tuple[int, ...] = (128, 128, 128)
    time_embed_dim: int = 64

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.time_embed_dim % 2 != 0 or self.time_embed_dim < 2:
            raise ValueError("time_embed_dim must be even and >= 2")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim + self.time_embed_dim, *self.hidden, self.input_dim]
        return list(zip(dims[:-1], dims[1:]))


def param_count(arch: ArchConfig) -> int:
    return sum(din * dout + dout for din, dout in arch.layer_dims)


def _param_views(arch: ArchConfig, flat: np.ndarray):
    """Reshape the flat vector into per-layer (W, b) views (no copies)."""
    views = []
    off = 0
    for din, dout in arch.layer_dims:
        w = flat[off : off + din * dout].reshape(din, dout)
        off += din * dout
        b = flat[off : off + dout]
        off += dout
        views.append((w, b))
    return views


def init_params(arch: ArchConfig, rng: np.random.Generator) -> np.ndarray:
    """Fan-in-scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for W and b."""
    flat = np.empty(param_count(arch), dtype=np.float64)
    off = 0
    for din, dout in arch.layer_dims:
        bound = 1.0 / math.sqrt(din)
        n = din * dout + dout
        flat[off : off + n] = rng.uniform(-bound, bound, size=n)
        off += n
    return flat


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of (possibly fractional) timesteps, shape (B, dim)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def forward(arch: ArchConfig, params: np.ndarray, x: np.ndarray, t: np.ndarray):
    """Forward pass.  x: (B, input_dim), t: scalar or (B,).  Returns (out, cache)."""
    x = np.asarray(x, dtype=np.float64)
    tvec = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    h = np.concatenate([x, time_embedding(tvec, arch.time_embed_dim)], axis=1)
    layers = _param_views(arch, params)
    cache = {"inputs": [], "pre": [], "sig": []}
    for i, (w, b) in enumerate(layers):
        cache["inputs"].append(h)
        z = h @ w + b
        if i < len(layers) - 1:
            cache["pre"].append(z)
            h, s = _silu(z)
            cache["sig"].append(s)
        else:
            h = z
    return h, cache


def backward(arch: ArchConfig, params: np.ndarray, cache: dict, d_out: np.ndarray) -> np.ndarray:
    """Gradient of sum(out * d_out) w.r.t. the flat parameter vector."""
    layers = _param_views(arch, params)
    grad = np.zeros_like(params)
    gviews = _param_views(arch, grad)
    d = np.asarray(d_out, dtype=np.float64)
    for i in reversed(range(len(layers))):
        w, _ = layers[i]
        gw, gb = gviews[i]
        h_in = cache["inputs"][i]
        gw += h_in.T @ d
        gb += d.sum(axis=0)
        if i > 0:
            d = d @ w.T
            z = cache["pre"][i - 1]
            s = cache["sig"][i - 1]
            d = d * (s * (1.0 + z * (1.0 - s)))
    return grad
