import numpy as np
import pytest

from cyclediff import ddim_ode, diffusion, net
from cyclediff.ddim_ode import (
    IntegrationPlan,
    LatentBatch,
    ddim_step_forward,
    ddim_step_reverse,
    decode,
    encode,
    load_latents,
    make_plan,
    s_ode,
    save_latents,
)
from cyclediff.diffusion import DenoiserModel, NoiseSchedule, make_schedule, zero_model
from cyclediff.errors import ConfigError, FormatError
from cyclediff.net import ArchConfig

# alphas chosen for hand evaluation: alpha_1 = 0.81, alpha_2 = 0.25
HAND_SCHEDULE = NoiseSchedule(np.array([1.0, 0.81, 0.25, 1e-4]))


def constant_model(value, schedule, data_shape=(2,)):
    """All-zero weights with the final bias set -> predicts `value` everywhere."""
    model = zero_model(schedule, data_shape)
    model.params[-len(value) :] = np.asarray(value, dtype=np.float64)
    return model


def trained_tiny_model(seed=0, T=50):
    arch = ArchConfig(input_dim=2, hidden=(16,), time_embed_dim=8)
    schedule = make_schedule(T, "linear-beta")
    params = net.init_params(arch, np.random.default_rng(seed))
    return DenoiserModel(arch, params, schedule, "tiny", (2,))


# --- single steps -------------------------------------------------------------


def test_reverse_step_zero_noise_is_pure_scaling():
    m = zero_model(HAND_SCHEDULE, (2,))
    x = np.array([1.5, -2.0])
    out = ddim_step_reverse(x, 2, 1, m)
    assert np.array_equal(out, np.sqrt(0.81 / 0.25) * x)


def test_reverse_step_hand_value():
    # x_t=(1,0), eps=(0,1), alpha_t=0.25 -> alpha_prev=0.81
    # frozen independent evaluation: (1.8, -1.1229558324579223)
    m = constant_model([0.0, 1.0], HAND_SCHEDULE)
    out = ddim_step_reverse(np.array([1.0, 0.0]), 2, 1, m)
    assert out == pytest.approx([1.8, -1.1229558324579223], abs=1e-14)


def test_step_preconditions():
    m = zero_model(HAND_SCHEDULE, (2,))
    with pytest.raises(ConfigError):
        ddim_step_reverse(np.zeros(2), 1, 1, m)
    with pytest.raises(ConfigError):
        ddim_step_forward(np.zeros(2), 1, 1, m)
    with pytest.raises(ConfigError):
        ddim_step_forward(np.zeros(2), 2, 1, m)


def test_forward_step_affine_image_of_constant():
    # from x=0 at alpha=0.81 up to alpha=0.25 with eps == c:
    # out = (sigma(next) - sigma(t)) sqrt(alpha_next) c; frozen coeff 0.6238643513655123
    c = np.array([0.7, -0.2])
    m = constant_model(c, HAND_SCHEDULE)
    out = ddim_step_forward(np.zeros(2), 1, 2, m)
    assert out == pytest.approx(0.6238643513655123 * c, abs=1e-14)


def test_forward_reverse_exact_inverse_under_constant_eps():
    m = constant_model([0.3, -1.1], HAND_SCHEDULE)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 2))
    up = ddim_step_forward(x, 1, 2, m)
    back = ddim_step_reverse(up, 2, 1, m)
    assert np.abs(back - x).max() <= 1e-12 * max(1.0, np.abs(x).max())


# --- plans ---------------------------------------------------------------------


def test_make_plan_uniform_stride():
    plan = make_plan(0, 1000, 200)
    assert plan.timesteps[0] == 0 and plan.timesteps[-1] == 1000
    assert plan.n_steps == 200
    assert set(np.diff(plan.timesteps)) == {5}
    assert plan.ascending


def test_plan_validation():
    with pytest.raises(ConfigError):
        make_plan(0, 10, 0)
    with pytest.raises(ConfigError):
        make_plan(0, 10, 11)  # more steps than integers available
    with pytest.raises(ConfigError):
        IntegrationPlan((0, 5, 3))
    with pytest.raises(ConfigError):
        IntegrationPlan((4,))


def test_plan_reversed():
    plan = make_plan(0, 50, 10)
    rev = plan.reversed()
    assert rev.timesteps == tuple(reversed(plan.timesteps))
    assert not rev.ascending


# --- s_ode ----------------------------------------------------------------------


def test_s_ode_single_step_equals_step_op():
    m = trained_tiny_model()
    x = np.random.default_rng(1).standard_normal((4, 2))
    plan = IntegrationPlan((10, 20))
    assert np.array_equal(s_ode(x, m, plan), ddim_step_forward(x, 10, 20, m))


def test_s_ode_endpoint_validation():
    m = trained_tiny_model(T=50)
    with pytest.raises(ConfigError):
        s_ode(np.zeros((1, 2)), m, IntegrationPlan((0, 60)))
    with pytest.raises(ConfigError):
        s_ode(np.zeros((1, 3)), m, IntegrationPlan((0, 10)))


def test_s_ode_deterministic():
    m = trained_tiny_model(seed=5)
    x = np.random.default_rng(2).standard_normal((8, 2))
    plan = make_plan(0, 50, 25)
    assert np.array_equal(s_ode(x, m, plan), s_ode(x, m, plan))


# --- encode / decode --------------------------------------------------------------


def test_encode_empty_batch_is_valid():
    m = trained_tiny_model()
    lat = encode(m, np.zeros((0, 2)), n_steps=10)
    assert len(lat) == 0
    assert lat.source_domain_tag == "tiny"
    out = decode(m, lat)
    assert out.shape == (0, 2)


def test_encode_provenance_and_purity():
    m = trained_tiny_model(seed=3)
    x = np.random.default_rng(3).standard_normal((16, 2))
    a = encode(m, x, n_steps=25)
    b = encode(m, x, n_steps=25)
    assert np.array_equal(a.latents, b.latents)
    assert a.latents.dtype == np.float32
    assert a.schedule_hash == m.schedule.content_hash()
    assert a.plan.timesteps[0] == 0 and a.plan.timesteps[-1] == m.schedule.T


def test_decode_zero_latent_deterministic():
    m = trained_tiny_model(seed=7)
    lat = LatentBatch(
        np.zeros((1, 2), dtype=np.float32), "tiny", m.schedule.content_hash(),
        make_plan(0, m.schedule.T, 10),
    )
    a = decode(m, lat)
    b = decode(m, lat)
    assert np.array_equal(a, b)
    assert a.shape == (1, 2)


def test_decode_shape_mismatch():
    m = trained_tiny_model()
    lat = LatentBatch(
        np.zeros((2, 3), dtype=np.float32), "x", "h", make_plan(0, m.schedule.T, 5)
    )
    with pytest.raises(ConfigError):
        decode(m, lat)


def test_stub_encode_decode_roundtrip_scaling():
    s = make_schedule(100, "linear-beta")
    m = zero_model(s, (2,))
    x = np.random.default_rng(4).standard_normal((32, 2))
    back = decode(m, encode(m, x, n_steps=50))
    # float32 latent quantization bounds the error
    assert np.abs(back - x).max() <= 1e-5


# --- latent files ------------------------------------------------------------------


def roundtrip_batch():
    m = trained_tiny_model(seed=9)
    x = np.random.default_rng(5).standard_normal((6, 2))
    return encode(m, x, n_steps=10)


def test_latent_file_roundtrip(tmp_path):
    lat = roundtrip_batch()
    p1, p2 = tmp_path / "a.lat", tmp_path / "b.lat"
    save_latents(lat, p1)
    back = load_latents(p1)
    assert np.array_equal(back.latents, lat.latents)
    assert back.schedule_hash == lat.schedule_hash
    assert back.plan.timesteps == lat.plan.timesteps
    assert back.source_domain_tag == lat.source_domain_tag
    save_latents(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_latent_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "x.lat"
    path.write_bytes(b"JUNK" + b"\x00" * 20)
    with pytest.raises(FormatError):
        load_latents(path)


def test_latent_file_rejects_truncated_payload(tmp_path):
    lat = roundtrip_batch()
    path = tmp_path / "a.lat"
    save_latents(lat, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(FormatError, match="length"):
        load_latents(path)


def test_latent_file_rejects_trailing_garbage(tmp_path):
    lat = roundtrip_batch()
    path = tmp_path / "a.lat"
    save_latents(lat, path)
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(FormatError):
        load_latents(path)


def test_latent_file_empty_batch(tmp_path):
    m = trained_tiny_model()
    lat = encode(m, np.zeros((0, 2)), n_steps=5)
    path = tmp_path / "empty.lat"
    save_latents(lat, path)
    back = load_latents(path)
    assert len(back) == 0
    assert back.data_shape == (2,)
