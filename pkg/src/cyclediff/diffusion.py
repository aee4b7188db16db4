"""Noise schedule, forward noising, denoising loss, and per-domain training.

A model is trained on exactly one domain's data; nothing in this module
ever sees two datasets at once.  Training is bit-reproducible for a fixed
seed: parameter init, the batch/noise draws, and the Adam update all run
in float64 with a deterministic order.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import net
from .errors import ConfigError, FormatError, TrainingDivergedError
from .net import ArchConfig

ALPHA_FLOOR = 1e-4  # terminal signal level; keeps every DDIM coefficient finite

_CKPT_MAGIC = b"DECD"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal-retention sequence alpha_0 = 1 > ... > alpha_T > 0."""

    alphas_cum: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alphas_cum, dtype=np.float64)
        object.__setattr__(self, "alphas_cum", a)
        if a.ndim != 1 or len(a) < 3:
            raise ConfigError("schedule needs at least T=2 (3 alpha values)")
        if a[0] != 1.0:
            raise ConfigError(f"alpha_0 must be exactly 1, got {a[0]!r}")
        if a[-1] > ALPHA_FLOOR:
            raise ConfigError(f"alpha_T must be <= {ALPHA_FLOOR}, got {a[-1]!r}")
        if a[-1] <= 0.0:
            raise ConfigError("alpha_T must be positive")
        if not np.all(np.diff(a) < 0):
            raise ConfigError("alphas must be strictly decreasing")

    @property
    def T(self) -> int:
        return len(self.alphas_cum) - 1

    def alpha(self, t) -> np.ndarray | float:
        return self.alphas_cum[t]

    def sigma(self, t) -> np.ndarray | float:
        """Noise-to-signal scale sqrt(1 - alpha_t) / sqrt(alpha_t)."""
        a = self.alphas_cum[t]
        return np.sqrt(1.0 - a) / np.sqrt(a)

    def content_hash(self) -> str:
        """Digest of the float32-canonicalized alphas (stable across file round trips)."""
        return hashlib.sha256(self.alphas_cum.astype(np.float32).tobytes()).hexdigest()


def make_schedule(T: int, kind: str = "linear-beta") -> NoiseSchedule:
    """Build a schedule of T steps.

    linear-beta: beta linearly spaced in [1e-4, 2e-2]; at the default
    T=1000 this lands alpha_T ~ 4e-5 on its own.  cosine: the squared
    cosine profile with offset 0.008.  Whenever the raw curve ends above
    the 1e-4 terminal floor (small T), all log-alphas are scaled by a
    common factor so alpha_T hits the floor exactly; this preserves
    monotonicity and alpha_0 = 1.
    """
    if T < 2:
        raise ConfigError(f"T must be >= 2, got {T}")
    if kind == "linear-beta":
        betas = np.linspace(1e-4, 2e-2, T)
        alphas = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    elif kind == "cosine":
        s = 0.008
        ts = np.arange(T + 1) / T
        f = np.cos((ts + s) / (1.0 + s) * math.pi / 2.0) ** 2
        alphas = np.clip(f / f[0], 1e-8, None)
        alphas[0] = 1.0
    else:
        raise ConfigError(f"unknown schedule kind: {kind!r}")
    if alphas[-1] > ALPHA_FLOOR:
        gamma = math.log(ALPHA_FLOOR) / math.log(alphas[-1])
        alphas = np.concatenate([[1.0], np.exp(np.log(alphas[1:]) * gamma)])
        alphas[-1] = ALPHA_FLOOR
    return NoiseSchedule(alphas)


def forward_sample(x0, t, eps, schedule: NoiseSchedule):
    """Noised sample sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps.

    t may be a scalar or a per-sample integer array; in the array case x0
    and eps must be batched with the leading axis matching t.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.T):
        raise ValueError(f"t out of range [0, {schedule.T}]")
    a = schedule.alphas_cum[t_arr]
    if t_arr.ndim > 0:
        a = a.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


@dataclass
class DenoiserModel:
    """A trained noise-prediction network for a single domain."""

    arch: ArchConfig
    params: np.ndarray
    schedule: NoiseSchedule
    domain_tag: str
    data_shape: tuple[int, ...]

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        self.data_shape = tuple(int(d) for d in self.data_shape)
        if len(self.params) != net.param_count(self.arch):
            raise ConfigError(
                f"params length {len(self.params)} does not match arch "
                f"({net.param_count(self.arch)})"
            )
        if int(np.prod(self.data_shape)) != self.arch.input_dim:
            raise ConfigError(
                f"data_shape {self.data_shape} does not flatten to input_dim "
                f"{self.arch.input_dim}"
            )

    @property
    def dim(self) -> int:
        return self.arch.input_dim


def zero_model(
    schedule: NoiseSchedule,
    data_shape: tuple[int, ...],
    domain_tag: str = "stub",
    arch: ArchConfig | None = None,
) -> DenoiserModel:
    """A model predicting exactly zero noise everywhere (all-zero parameters)."""
    dim = int(np.prod(data_shape))
    arch = arch or ArchConfig(input_dim=dim)
    return DenoiserModel(
        arch=arch,
        params=np.zeros(net.param_count(arch)),
        schedule=schedule,
        domain_tag=domain_tag,
        data_shape=tuple(data_shape),
    )


def predict_eps(model: DenoiserModel, x, t):
    """Predicted noise at (x, t); t may be fractional.  Pure function."""
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == model.data_shape
    batch = x.reshape(1, -1) if single else x.reshape(x.shape[0], -1)
    if batch.shape[1] != model.dim:
        raise ValueError(f"sample shape {x.shape} does not match model data_shape {model.data_shape}")
    out, _ = net.forward(model.arch, model.params, batch, t)
    return out.reshape(model.data_shape) if single else out.reshape(x.shape)


def denoise_loss(
    model: DenoiserModel,
    x0: np.ndarray,
    rng: np.random.Generator,
    schedule: NoiseSchedule | None = None,
) -> tuple[float, np.ndarray]:
    """Monte-Carlo noise-prediction objective and its parameter gradient.

    Per sample, draws t ~ Uniform{1..T} then eps ~ N(0, I) (in that order,
    which pins the RNG stream), noises x0, and scores the squared error
    between predicted and injected noise.  The loss is the per-sample
    squared L2 error averaged over the batch, so a constant-zero predictor
    scores ~ the data dimensionality.
    """
    schedule = schedule or model.schedule
    x0 = np.asarray(x0, dtype=np.float64).reshape(len(x0), -1)
    if len(x0) == 0:
        raise ValueError("batch must be nonempty")
    b = len(x0)
    t = rng.integers(1, schedule.T + 1, size=b)
    eps = rng.standard_normal((b, model.dim))
    xt = forward_sample(x0, t, eps, schedule)
    pred, cache = net.forward(model.arch, model.params, xt, t)
    resid = pred - eps
    loss = float((resid**2).sum() / b)
    grad = net.backward(model.arch, model.params, cache, 2.0 * resid / b)
    return loss, grad


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch_size: int = 128
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    clip_norm: float = 1.0
    holdout_fraction: float = 0.1
    log_every: int = 200

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("steps must be >= 0, batch_size >= 1, lr > 0")
        if not (0.0 <= self.holdout_fraction < 1.0):
            raise ConfigError("holdout_fraction must be in [0, 1)")


@dataclass
class TrainResult:
    model: DenoiserModel
    curve: list[tuple[int, float]]
    holdout_initial: float
    holdout_final: float


def _holdout_loss(model: DenoiserModel, data: np.ndarray, seed_seq) -> float:
    # fresh generator each call -> identical draws, so before/after compare
    rng = np.random.default_rng(np.random.PCG64(seed_seq))
    loss, _ = denoise_loss(model, data, rng)
    return loss


def train(
    dataset: np.ndarray,
    arch: ArchConfig,
    cfg: TrainConfig,
    schedule: NoiseSchedule,
    domain_tag: str = "",
    data_shape: tuple[int, ...] | None = None,
) -> TrainResult:
    """Fit a noise predictor on one domain's samples with Adam.

    dataset: (N, *data_shape).  The training curve holds (step, batch loss)
    pairs sampled every cfg.log_every steps plus the final step.
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    data_shape = tuple(data_shape or dataset.shape[1:])
    flat = dataset.reshape(len(dataset), -1)
    if flat.shape[1] != arch.input_dim:
        raise ConfigError(
            f"dataset sample dim {flat.shape[1]} != arch.input_dim {arch.input_dim}"
        )

    ss_init, ss_split, ss_batch, ss_eval = np.random.SeedSequence(cfg.seed).spawn(4)
    params = net.init_params(arch, np.random.default_rng(np.random.PCG64(ss_init)))
    model = DenoiserModel(arch, params, schedule, domain_tag, data_shape)

    n_hold = int(math.ceil(len(flat) * cfg.holdout_fraction)) if cfg.holdout_fraction else 0
    n_hold = min(n_hold, len(flat) - 1)
    perm = np.random.default_rng(np.random.PCG64(ss_split)).permutation(len(flat))
    hold = flat[perm[:n_hold]] if n_hold else flat
    tr = flat[perm[n_hold:]] if n_hold else flat

    holdout_initial = _holdout_loss(model, hold, ss_eval)

    rng = np.random.default_rng(np.random.PCG64(ss_batch))
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    curve: list[tuple[int, float]] = []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(tr), size=cfg.batch_size)
        loss, grad = denoise_loss(model, tr[idx], rng)
        if not math.isfinite(loss):
            raise TrainingDivergedError(step)
        gnorm = float(np.linalg.norm(grad))
        if cfg.clip_norm > 0 and gnorm > cfg.clip_norm:
            grad *= cfg.clip_norm / gnorm
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad**2
        mhat = m / (1.0 - cfg.beta1 ** (step + 1))
        vhat = v / (1.0 - cfg.beta2 ** (step + 1))
        params -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            curve.append((step, loss))

    holdout_final = _holdout_loss(model, hold, ss_eval)
    return TrainResult(model, curve, holdout_initial, holdout_final)


# ---------------------------------------------------------------------------
# Checkpoint file: magic "DECD", version u16, JSON header, then little-endian
# float32 arrays for alphas_cum and params.  File-level round trip is
# bit-exact; in-memory float64 params quantize to float32 on save.
# ---------------------------------------------------------------------------


def save_checkpoint(model: DenoiserModel, path: str | Path) -> None:
    header = {
        "domain_tag": model.domain_tag,
        "arch": {
            "input_dim": model.arch.input_dim,
            "hidden": list(model.arch.hidden),
            "time_embed_dim": model.arch.time_embed_dim,
        },
        "T": model.schedule.T,
        "data_shape": list(model.data_shape),
        "schedule_hash": model.schedule.content_hash(),
        "n_alphas": len(model.schedule.alphas_cum),
        "n_params": len(model.params),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<H", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(model.schedule.alphas_cum.astype("<f4").tobytes())
        fh.write(model.params.astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> DenoiserModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", blob, 6)
    try:
        header = json.loads(blob[10 : 10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    off = 10 + hlen
    n_alphas = int(header["n_alphas"])
    n_params = int(header["n_params"])
    need = off + 4 * (n_alphas + n_params)
    if len(blob) != need:
        raise FormatError(
            f"checkpoint payload length mismatch: have {len(blob)} bytes, need {need}"
        )
    alphas = np.frombuffer(blob, dtype="<f4", count=n_alphas, offset=off).astype(np.float64)
    schedule = NoiseSchedule(alphas)
    if schedule.content_hash() != header["schedule_hash"]:
        raise FormatError("checkpoint schedule hash does not match its alphas")
    params = np.frombuffer(
        blob, dtype="<f4", count=n_params, offset=off + 4 * n_alphas
    ).astype(np.float64)
    arch = ArchConfig(
        input_dim=int(header["arch"]["input_dim"]),
        hidden=tuple(int(h) for h in header["arch"]["hidden"]),
        time_embed_dim=int(header["arch"]["time_embed_dim"]),
    )
    return DenoiserModel(
        arch=arch,
        params=params,
        schedule=schedule,
        domain_tag=str(header["domain_tag"]),
        data_shape=tuple(int(d) for d in header["data_shape"]),
    )
