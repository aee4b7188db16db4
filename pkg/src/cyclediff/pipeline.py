"""End-to-end orchestration: independent training, cross-domain translation,
cycle validation, and the two-party latent exchange.

Translation sends a sample through the source model's encoding ODE into
latent space and back out through the target model's decoding ODE.  The
same machinery split across two file-passing parties (encoder never reads
target data, decoder never reads source data) produces bit-identical
outputs, because the latent handoff is float32 in both cases.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ddim_ode, diffusion, synth_data
from .audit import FileAccessAudit
from .ddim_ode import DEFAULT_N_STEPS, LatentBatch, make_plan, s_ode
from .diffusion import DenoiserModel, TrainConfig, TrainResult
from .errors import ConfigError, FormatError, RoleError
from .net import ArchConfig


@dataclass
class DomainPair:
    """Source and target denoisers bridged through a common latent space."""

    source_model: DenoiserModel
    target_model: DenoiserModel

    def __post_init__(self):
        if self.source_model.data_shape != self.target_model.data_shape:
            raise ConfigError(
                f"data shapes differ: source {self.source_model.data_shape} vs "
                f"target {self.target_model.data_shape}"
            )
        if self.source_model.schedule.T != self.target_model.schedule.T:
            raise ConfigError(
                "source and target schedules must have equal T so the terminal "
                "latent spaces coincide"
            )

    def swapped(self) -> "DomainPair":
        return DomainPair(self.target_model, self.source_model)


@dataclass
class TrainPairResult:
    pair: DomainPair
    source: TrainResult
    target: TrainResult


def train_pair(
    source_data: np.ndarray,
    target_data: np.ndarray,
    arch: ArchConfig,
    schedule: diffusion.NoiseSchedule,
    source_cfg: TrainConfig,
    target_cfg: TrainConfig,
    source_tag: str = "source",
    target_tag: str = "target",
) -> TrainPairResult:
    """Train the two domain models independently (never on a joint batch)."""
    source_data = np.asarray(source_data, dtype=np.float64)
    target_data = np.asarray(target_data, dtype=np.float64)
    if source_data.shape[1:] != target_data.shape[1:]:
        raise ConfigError(
            f"domain sample shapes differ: {source_data.shape[1:]} vs {target_data.shape[1:]}"
        )
    src = diffusion.train(source_data, arch, source_cfg, schedule, domain_tag=source_tag)
    tgt = diffusion.train(target_data, arch, target_cfg, schedule, domain_tag=target_tag)
    return TrainPairResult(DomainPair(src.model, tgt.model), src, tgt)


def translate(x_s, pair: DomainPair, n_steps: int = DEFAULT_N_STEPS) -> np.ndarray:
    """Source -> latent -> target.  Deterministic and per-sample independent."""
    lat = ddim_ode.encode(pair.source_model, x_s, n_steps)
    return ddim_ode.decode(pair.target_model, lat)


@dataclass
class CycleReport:
    """Per-sample and averaged L2 distances of the two-leg translation cycle."""

    per_sample_latent_l2: np.ndarray
    per_sample_source_l2: np.ndarray
    n_steps: int
    source_domain: str
    target_domain: str

    @property
    def mean_latent_l2(self) -> float:
        return float(np.mean(self.per_sample_latent_l2))

    @property
    def mean_source_l2(self) -> float:
        return float(np.mean(self.per_sample_source_l2))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["sample_id", "latent_l2", "source_l2"])
            for i, (lz, sz) in enumerate(
                zip(self.per_sample_latent_l2, self.per_sample_source_l2)
            ):
                wr.writerow([i, repr(float(lz)), repr(float(sz))])
            wr.writerow(["mean", repr(self.mean_latent_l2), repr(self.mean_source_l2)])


@dataclass
class CycleStages:
    """The four intermediate batches of a full translation cycle."""

    latent: np.ndarray       # encode_source(x)
    target: np.ndarray       # decode_target(latent)
    latent_back: np.ndarray  # encode_target(target)
    source_back: np.ndarray  # decode_source(latent_back)


def cycle_stages(batch, pair: DomainPair, n_steps: int = DEFAULT_N_STEPS) -> CycleStages:
    """Run the full source -> target -> source cycle, keeping every stage.

    All four integrations run in float64 (no latent quantization), so with
    constant-noise stub models the cycle closes to float rounding.
    """
    x_s = np.asarray(batch, dtype=np.float64)
    if len(x_s) == 0:
        raise ValueError("batch must be nonempty")
    T = pair.source_model.schedule.T
    up = make_plan(0, T, n_steps)
    down = up.reversed()
    x_z = s_ode(x_s, pair.source_model, up)
    x_t = s_ode(x_z, pair.target_model, down)
    x_z_back = s_ode(x_t, pair.target_model, up)
    x_s_back = s_ode(x_z_back, pair.source_model, down)
    return CycleStages(x_z, x_t, x_z_back, x_s_back)


def cycle_report_from_stages(
    batch, stages: CycleStages, pair: DomainPair, n_steps: int
) -> CycleReport:
    x_s = np.asarray(batch, dtype=np.float64)
    flat = lambda v: v.reshape(len(v), -1)
    return CycleReport(
        per_sample_latent_l2=np.linalg.norm(flat(stages.latent) - flat(stages.latent_back), axis=1),
        per_sample_source_l2=np.linalg.norm(flat(x_s) - flat(stages.source_back), axis=1),
        n_steps=n_steps,
        source_domain=pair.source_model.domain_tag,
        target_domain=pair.target_model.domain_tag,
    )


def cycle_check(batch, pair: DomainPair, n_steps: int = DEFAULT_N_STEPS) -> CycleReport:
    """Round-trip a batch source -> target -> source and measure the drift."""
    stages = cycle_stages(batch, pair, n_steps)
    return cycle_report_from_stages(batch, stages, pair, n_steps)


# ---------------------------------------------------------------------------
# Two-party protocol: the encoder (party A) holds source data and the source
# model; the decoder (party B) holds the target model.  Only the latent file
# crosses the boundary, and each op logs exactly what it read.
# ---------------------------------------------------------------------------


class PartyRole(enum.Enum):
    ENCODER_A = "encoder-a"
    DECODER_B = "decoder-b"


def _load_samples(path: Path, data_shape: tuple[int, ...]) -> np.ndarray:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".pgm", ".png"))
        if not files:
            return np.zeros((0,) + data_shape)
        return np.stack([synth_data.load_patch(p).pixels for p in files])
    if path.suffix.lower() == ".csv":
        ps = synth_data.load_pointset_csv(path)
        return ps.points
    raise ConfigError(f"cannot load samples from {path}: expected .csv or a patch directory")


def _write_samples(samples: np.ndarray, path: Path) -> None:
    if samples.ndim == 2:  # point batches -> CSV
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "y"])
            for row in samples:
                wr.writerow([repr(float(v)) for v in row])
    else:  # image batches -> directory of patches
        path.mkdir(parents=True, exist_ok=True)
        for i, px in enumerate(samples):
            synth_data.save_patch(
                synth_data.GrayPatch(np.clip(px, 0.0, 1.0)), path / f"out_{i:05d}.pgm"
            )


def party_encode(
    role: PartyRole,
    data_path: str | Path,
    model_path: str | Path,
    out_path: str | Path,
    n_steps: int = DEFAULT_N_STEPS,
    audit_log_path: str | Path | None = None,
) -> Path:
    """Party A: encode owned source data and emit only the latent file."""
    if role != PartyRole.ENCODER_A:
        raise RoleError(f"party_encode requires {PartyRole.ENCODER_A}, got {role}")
    data_path, out_path = Path(data_path), Path(out_path)
    with FileAccessAudit() as audit:
        model = diffusion.load_checkpoint(model_path)
        samples = _load_samples(data_path, model.data_shape)
        lat = ddim_ode.encode(model, samples.reshape((-1,) + model.data_shape), n_steps)
        ddim_ode.save_latents(lat, out_path)
    if audit_log_path is not None:
        audit.write_log(audit_log_path)
    return out_path


def party_decode(
    role: PartyRole,
    latent_path: str | Path,
    model_path: str | Path,
    out_path: str | Path,
    audit_log_path: str | Path | None = None,
) -> Path:
    """Party B: decode a received latent file with the owned target model.

    Rejects the file outright if its schedule hash does not match the
    target model's schedule; decoding across incompatible schedules would
    silently produce garbage.
    """
    if role != PartyRole.DECODER_B:
        raise RoleError(f"party_decode requires {PartyRole.DECODER_B}, got {role}")
    latent_path, out_path = Path(latent_path), Path(out_path)
    with FileAccessAudit() as audit:
        model = diffusion.load_checkpoint(model_path)
        lat = ddim_ode.load_latents(latent_path)
        if lat.schedule_hash != model.schedule.content_hash():
            raise FormatError(
                "latent file schedule hash does not match the decoding model's schedule"
            )
        if lat.data_shape != model.data_shape:
            raise FormatError(
                f"latent data shape {lat.data_shape} does not match model "
                f"data_shape {model.data_shape}"
            )
        out = ddim_ode.decode(model, lat)
        _write_samples(out, out_path)
    if audit_log_path is not None:
        audit.write_log(audit_log_path)
    return out_path
