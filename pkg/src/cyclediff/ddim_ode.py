"""Deterministic two-way DDIM integration between data and latent space.

One step from signal level alpha_t to alpha_u (either direction) is

    x_u = sqrt(alpha_u / alpha_t) * x_t
        + (sigma(u) - sigma(t)) * sqrt(alpha_u) * eps(x_t, t)

with sigma(t) = sqrt(1 - alpha_t) / sqrt(alpha_t).  The noise prediction
is always anchored at the point being left, so composing a forward
(noising) pass with the matching reverse pass is exact whenever the
prediction is constant, and accurate to discretization error otherwise.
Encoding runs 0 -> T, decoding runs T -> 0; nothing here draws random
numbers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import DenoiserModel, predict_eps
from .errors import ConfigError, FormatError

_LATENT_MAGIC = b"DECZ"
_LATENT_VERSION = 1

DEFAULT_N_STEPS = 200


@dataclass(frozen=True)
class IntegrationPlan:
    """A strictly monotone sequence of schedule timesteps to step through."""

    timesteps: tuple[int, ...]

    def __post_init__(self):
        ts = tuple(int(t) for t in self.timesteps)
        object.__setattr__(self, "timesteps", ts)
        if len(ts) < 2:
            raise ConfigError("plan needs at least one step (two timesteps)")
        diffs = np.diff(ts)
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ConfigError(f"plan timesteps must be strictly monotone, got {ts[:8]}...")

    @property
    def t_start(self) -> int:
        return self.timesteps[0]

    @property
    def t_end(self) -> int:
        return self.timesteps[-1]

    @property
    def n_steps(self) -> int:
        return len(self.timesteps) - 1

    @property
    def ascending(self) -> bool:
        return self.timesteps[-1] > self.timesteps[0]

    def reversed(self) -> "IntegrationPlan":
        return IntegrationPlan(tuple(reversed(self.timesteps)))


def make_plan(t_start: int, t_end: int, n_steps: int) -> IntegrationPlan:
    """Uniform-stride plan between two endpoints (rounded to integers)."""
    if n_steps < 1:
        raise ConfigError(f"n_steps must be >= 1, got {n_steps}")
    if abs(t_end - t_start) < n_steps:
        raise ConfigError(
            f"n_steps={n_steps} exceeds the {abs(t_end - t_start)} integer steps "
            f"between {t_start} and {t_end}"
        )
    ts = np.round(np.linspace(t_start, t_end, n_steps + 1)).astype(int)
    return IntegrationPlan(tuple(ts))


def _step(x, t: int, u: int, model: DenoiserModel):
    a = model.schedule.alphas_cum
    c_x = np.sqrt(a[u] / a[t])
    c_e = (model.schedule.sigma(u) - model.schedule.sigma(t)) * np.sqrt(a[u])
    return c_x * np.asarray(x, dtype=np.float64) + c_e * predict_eps(model, x, float(t))


def ddim_step_reverse(x_t, t: int, t_prev: int, model: DenoiserModel):
    """One denoising step t -> t_prev (t_prev < t)."""
    if t_prev >= t:
        raise ConfigError(f"reverse step needs t_prev < t, got {t_prev} >= {t}")
    return _step(x_t, t, t_prev, model)


def ddim_step_forward(x_t, t: int, t_next: int, model: DenoiserModel):
    """One noising (inversion) step t -> t_next (t_next > t)."""
    if t_next <= t:
        raise ConfigError(f"forward step needs t_next > t, got {t_next} <= {t}")
    return _step(x_t, t, t_next, model)


def s_ode(x, model: DenoiserModel, plan: IntegrationPlan):
    """Compose DDIM steps along the plan; deterministic in all inputs."""
    if plan.t_start < 0 or plan.t_start > model.schedule.T or plan.t_end < 0 or plan.t_end > model.schedule.T:
        raise ConfigError(
            f"plan endpoints ({plan.t_start}, {plan.t_end}) outside schedule range "
            f"[0, {model.schedule.T}]"
        )
    x = np.asarray(x, dtype=np.float64)
    leading = x.shape[: x.ndim - len(model.data_shape)]
    if x.shape[len(leading) :] != model.data_shape:
        raise ConfigError(f"sample shape {x.shape} does not end with model data_shape {model.data_shape}")
    for t, u in zip(plan.timesteps[:-1], plan.timesteps[1:]):
        x = _step(x, t, u, model)
    return x


@dataclass
class LatentBatch:
    """Samples carried to the integration endpoint, the only cross-party object.

    Latents are stored in float32, the wire precision of the latent file,
    so the in-process values and the file payload are bit-identical.
    """

    latents: np.ndarray
    source_domain_tag: str
    schedule_hash: str
    plan: IntegrationPlan

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float32)

    def __len__(self) -> int:
        return len(self.latents)

    @property
    def data_shape(self) -> tuple[int, ...]:
        return tuple(self.latents.shape[1:])


def encode(model: DenoiserModel, batch, n_steps: int = DEFAULT_N_STEPS) -> LatentBatch:
    """Integrate data 0 -> T into latent space."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[1:] != model.data_shape:
        raise ConfigError(f"batch shape {batch.shape} does not match model data_shape {model.data_shape}")
    plan = make_plan(0, model.schedule.T, n_steps)
    if len(batch) == 0:
        lat = np.zeros((0,) + model.data_shape, dtype=np.float32)
    else:
        lat = s_ode(batch, model, plan).astype(np.float32)
    return LatentBatch(
        latents=lat,
        source_domain_tag=model.domain_tag,
        schedule_hash=model.schedule.content_hash(),
        plan=plan,
    )


def decode(model: DenoiserModel, latent_batch: LatentBatch) -> np.ndarray:
    """Integrate latents T -> 0 under the given (possibly other-domain) model.

    The schedule hash in the batch is provenance, not a key: decoding under
    a different domain's model is the whole point.  Shapes must match.
    """
    if latent_batch.data_shape != model.data_shape:
        raise ConfigError(
            f"latent shape {latent_batch.data_shape} does not match model "
            f"data_shape {model.data_shape}"
        )
    if len(latent_batch) == 0:
        return np.zeros((0,) + model.data_shape, dtype=np.float64)
    plan = latent_batch.plan.reversed()
    return s_ode(latent_batch.latents.astype(np.float64), model, plan)


# ---------------------------------------------------------------------------
# Latent file: magic "DECZ", version u16, JSON header, float32 payload.
# This file is the entire cross-party wire format.
# ---------------------------------------------------------------------------


def save_latents(batch: LatentBatch, path: str | Path) -> None:
    header = {
        "source_domain_tag": batch.source_domain_tag,
        "schedule_hash": batch.schedule_hash,
        "data_shape": list(batch.data_shape),
        "timesteps": list(batch.plan.timesteps),
        "count": len(batch),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_LATENT_MAGIC)
        fh.write(struct.pack("<H", _LATENT_VERSION))
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(np.ascontiguousarray(batch.latents, dtype="<f4").tobytes())


def load_latents(path: str | Path) -> LatentBatch:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _LATENT_MAGIC:
        raise FormatError(f"bad latent-file magic in {path}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != _LATENT_VERSION:
        raise FormatError(f"unsupported latent-file version {version}")
    (hlen,) = struct.unpack_from("<I", blob, 6)
    if 10 + hlen > len(blob):
        raise FormatError("latent-file header extends past end of file")
    try:
        header = json.loads(blob[10 : 10 + hlen].decode("utf-8"))
        shape = tuple(int(d) for d in header["data_shape"])
        count = int(header["count"])
        plan = IntegrationPlan(tuple(int(t) for t in header["timesteps"]))
        tag = str(header["source_domain_tag"])
        shash = str(header["schedule_hash"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, ConfigError) as exc:
        raise FormatError(f"corrupt latent-file header: {exc}") from None
    n_vals = count * int(np.prod(shape)) if count else 0
    need = 10 + hlen + 4 * n_vals
    if len(blob) != need:
        raise FormatError(
            f"latent payload length mismatch: have {len(blob)} bytes, need {need} "
            f"for {count} samples of shape {shape}"
        )
    lat = np.frombuffer(blob, dtype="<f4", count=n_vals, offset=10 + hlen).reshape(
        (count,) + shape
    )
    return LatentBatch(lat.copy(), tag, shash, plan)
