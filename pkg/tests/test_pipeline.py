import csv

import numpy as np
import pytest

from cyclediff import ddim_ode, diffusion, pipeline, synth_data
from cyclediff.audit import load_audit_log
from cyclediff.diffusion import TrainConfig, make_schedule, save_checkpoint, zero_model
from cyclediff.errors import ConfigError, FormatError, RoleError
from cyclediff.net import ArchConfig
from cyclediff.pipeline import (
    DomainPair,
    PartyRole,
    cycle_check,
    party_decode,
    party_encode,
    train_pair,
    translate,
)

SCHED = make_schedule(200, "linear-beta")


def stub_pair(T=200):
    s = make_schedule(T, "linear-beta")
    return DomainPair(zero_model(s, (2,), "src"), zero_model(s, (2,), "tgt"))


# --- pair validation -----------------------------------------------------------


def test_pair_requires_matching_shapes():
    with pytest.raises(ConfigError):
        DomainPair(zero_model(SCHED, (2,)), zero_model(SCHED, (3,)))


def test_pair_requires_equal_T():
    with pytest.raises(ConfigError):
        DomainPair(zero_model(SCHED, (2,)), zero_model(make_schedule(100, "linear-beta"), (2,)))


# --- train_pair ------------------------------------------------------------------


def test_train_pair_tags_and_logs():
    rng = np.random.default_rng(0)
    arch = ArchConfig(input_dim=2, hidden=(8,), time_embed_dim=4)
    cfg = TrainConfig(steps=5, batch_size=8, seed=1)
    res = train_pair(
        rng.standard_normal((32, 2)),
        rng.standard_normal((32, 2)),
        arch,
        SCHED,
        cfg,
        TrainConfig(steps=5, batch_size=8, seed=2),
        source_tag="cr",
        target_tag="pr",
    )
    assert res.pair.source_model.domain_tag == "cr"
    assert res.pair.target_model.domain_tag == "pr"
    assert res.pair.source_model.domain_tag != res.pair.target_model.domain_tag
    assert len(res.source.curve) >= 1 and len(res.target.curve) >= 1


def test_train_pair_rejects_empty_domain():
    arch = ArchConfig(input_dim=2, hidden=(8,), time_embed_dim=4)
    with pytest.raises(ValueError):
        train_pair(
            np.zeros((0, 2)),
            np.zeros((4, 2)),
            arch,
            SCHED,
            TrainConfig(steps=1),
            TrainConfig(steps=1),
        )


def test_train_pair_rejects_shape_mismatch():
    arch = ArchConfig(input_dim=2, hidden=(8,), time_embed_dim=4)
    with pytest.raises(ConfigError):
        train_pair(
            np.zeros((4, 2)),
            np.zeros((4, 3)),
            arch,
            SCHED,
            TrainConfig(steps=1),
            TrainConfig(steps=1),
        )


# --- translate --------------------------------------------------------------------


def test_translate_stub_is_near_identity():
    pair = stub_pair()
    x = np.random.default_rng(1).standard_normal((16, 2))
    out = translate(x, pair, n_steps=50)
    assert np.abs(out - x).max() <= 1e-5  # float32 latent handoff


def test_translate_batch_permutation_equivariance():
    pair = stub_pair()
    x = np.random.default_rng(2).standard_normal((10, 2))
    perm = np.random.default_rng(3).permutation(10)
    assert np.array_equal(translate(x, pair, 25)[perm], translate(x[perm], pair, 25))


# --- cycle_check ---------------------------------------------------------------------


def test_stub_cycle_closes_to_float_rounding():
    pair = stub_pair()
    x = np.random.default_rng(4).standard_normal((64, 2))
    rep = cycle_check(x, pair, n_steps=100)
    scale = np.linalg.norm(x, axis=1).max()
    assert rep.per_sample_latent_l2.max() <= 1e-12 * max(scale, 1.0)
    assert rep.per_sample_source_l2.max() <= 1e-12 * max(scale, 1.0)
    assert rep.mean_latent_l2 == pytest.approx(rep.per_sample_latent_l2.mean())
    assert rep.mean_source_l2 == pytest.approx(rep.per_sample_source_l2.mean())


def test_cycle_check_requires_samples():
    with pytest.raises(ValueError):
        cycle_check(np.zeros((0, 2)), stub_pair(), 10)


def test_cycle_report_csv(tmp_path):
    pair = stub_pair()
    x = np.random.default_rng(5).standard_normal((5, 2))
    rep = cycle_check(x, pair, 20)
    path = tmp_path / "rep.csv"
    rep.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["sample_id", "latent_l2", "source_l2"]
    assert len(rows) == 7  # header + 5 samples + summary
    assert rows[-1][0] == "mean"
    assert float(rows[-1][1]) == pytest.approx(rep.mean_latent_l2)


# --- two-party protocol ----------------------------------------------------------------


@pytest.fixture
def party_setup(tmp_path):
    """Checkpoints, source csv, and an unrelated target-domain raw file."""
    a_dir = tmp_path / "party_a"
    b_dir = tmp_path / "party_b"
    a_dir.mkdir()
    b_dir.mkdir()
    src = zero_model(SCHED, (2,), "src")
    src.params[-2:] = [0.05, -0.02]  # constant nonzero predictor
    tgt = zero_model(SCHED, (2,), "tgt")
    tgt.params[-2:] = [-0.01, 0.03]
    save_checkpoint(src, a_dir / "src.ckpt")
    save_checkpoint(tgt, b_dir / "tgt.ckpt")
    ps = synth_data.make_dataset("cr", 64, 5)
    synth_data.save_pointset_csv(ps, a_dir / "source.csv")
    tgt_raw = synth_data.make_dataset("pr", 64, 6)
    synth_data.save_pointset_csv(tgt_raw, b_dir / "target_raw.csv")
    return a_dir, b_dir


def test_party_pipeline_equals_in_process(party_setup, tmp_path):
    a_dir, b_dir = party_setup
    latent = tmp_path / "latent.bin"
    out = tmp_path / "translated.csv"
    party_encode(
        PartyRole.ENCODER_A,
        a_dir / "source.csv",
        a_dir / "src.ckpt",
        latent,
        n_steps=40,
        audit_log_path=a_dir / "audit.json",
    )
    party_decode(
        PartyRole.DECODER_B,
        latent,
        b_dir / "tgt.ckpt",
        out,
        audit_log_path=b_dir / "audit.json",
    )
    # in-process reference with the same (checkpoint-loaded) models
    src = diffusion.load_checkpoint(a_dir / "src.ckpt")
    tgt = diffusion.load_checkpoint(b_dir / "tgt.ckpt")
    ps = synth_data.load_pointset_csv(a_dir / "source.csv")
    want = translate(ps.points, DomainPair(src, tgt), n_steps=40)
    rows = list(csv.reader(open(out)))[1:]
    got = np.array([[float(v) for v in row] for row in rows])
    assert np.array_equal(got, want)


def test_party_audit_respects_privacy_boundary(party_setup, tmp_path):
    a_dir, b_dir = party_setup
    latent = tmp_path / "latent.bin"
    party_encode(
        PartyRole.ENCODER_A, a_dir / "source.csv", a_dir / "src.ckpt", latent,
        n_steps=10, audit_log_path=a_dir / "audit.json",
    )
    party_decode(
        PartyRole.DECODER_B, latent, b_dir / "tgt.ckpt", tmp_path / "out.csv",
        audit_log_path=b_dir / "audit.json",
    )
    a_reads = set(load_audit_log(a_dir / "audit.json")["reads"])
    b_reads = set(load_audit_log(b_dir / "audit.json")["reads"])
    # encoder never touches the decoder's files; decoder never touches raw source
    assert not any(str(b_dir) in path for path in a_reads)
    assert str((a_dir / "source.csv").resolve()) not in b_reads
    assert not a_reads & b_reads
    assert str((a_dir / "source.csv").resolve()) in a_reads


def test_party_role_enforcement(party_setup, tmp_path):
    a_dir, b_dir = party_setup
    with pytest.raises(RoleError):
        party_encode(PartyRole.DECODER_B, a_dir / "source.csv", a_dir / "src.ckpt", tmp_path / "x")
    with pytest.raises(RoleError):
        party_decode(PartyRole.ENCODER_A, tmp_path / "x", b_dir / "tgt.ckpt", tmp_path / "y")


def test_party_decode_rejects_tampered_schedule_hash(party_setup, tmp_path):
    a_dir, b_dir = party_setup
    latent = tmp_path / "latent.bin"
    party_encode(PartyRole.ENCODER_A, a_dir / "source.csv", a_dir / "src.ckpt", latent, n_steps=10)
    blob = bytearray(latent.read_bytes())
    pos = blob.find(b'"schedule_hash": "') + len(b'"schedule_hash": "')
    blob[pos] = ord("f") if blob[pos] != ord("f") else ord("0")
    latent.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="hash"):
        party_decode(PartyRole.DECODER_B, latent, b_dir / "tgt.ckpt", tmp_path / "out.csv")


def test_party_decode_rejects_wrong_schedule_checkpoint(party_setup, tmp_path):
    a_dir, b_dir = party_setup
    latent = tmp_path / "latent.bin"
    party_encode(PartyRole.ENCODER_A, a_dir / "source.csv", a_dir / "src.ckpt", latent, n_steps=10)
    other = zero_model(make_schedule(200, "cosine"), (2,), "other")
    save_checkpoint(other, b_dir / "other.ckpt")
    with pytest.raises(FormatError, match="hash"):
        party_decode(PartyRole.DECODER_B, latent, b_dir / "other.ckpt", tmp_path / "out.csv")


def test_party_decode_rejects_truncated_latent(party_setup, tmp_path):
    a_dir, b_dir = party_setup
    latent = tmp_path / "latent.bin"
    party_encode(PartyRole.ENCODER_A, a_dir / "source.csv", a_dir / "src.ckpt", latent, n_steps=10)
    latent.write_bytes(latent.read_bytes()[:-6])
    with pytest.raises(FormatError, match="length"):
        party_decode(PartyRole.DECODER_B, latent, b_dir / "tgt.ckpt", tmp_path / "out.csv")


def test_party_empty_batch_roundtrip(party_setup, tmp_path):
    a_dir, b_dir = party_setup
    empty = synth_data.PointSet(np.zeros((0, 2)), np.zeros(0, dtype=int), synth_data.Domain.CR)
    synth_data.save_pointset_csv(empty, a_dir / "empty.csv")
    latent = tmp_path / "latent.bin"
    out = tmp_path / "out.csv"
    party_encode(PartyRole.ENCODER_A, a_dir / "empty.csv", a_dir / "src.ckpt", latent, n_steps=10)
    party_decode(PartyRole.DECODER_B, latent, b_dir / "tgt.ckpt", out)
    rows = list(csv.reader(open(out)))
    assert rows == [["x", "y"]]
