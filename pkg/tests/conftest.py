"""Shared fixtures: trained models are expensive, so they are trained once
per configuration and cached as checkpoint files under tests/.cache.

Every fixture returns the checkpoint-reloaded model (float32 parameters),
so results are identical whether the cache was cold or warm, and match
what the CLI / two-party flows see.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from cyclediff import diffusion, patches, synth_data
from cyclediff.diffusion import TrainConfig
from cyclediff.net import ArchConfig

CACHE = Path(__file__).parent / ".cache"

POINT_ARCH = ArchConfig(input_dim=2, hidden=(128, 128, 128), time_embed_dim=64)
PATCH_ARCH = ArchConfig(input_dim=256, hidden=(512, 512, 512), time_embed_dim=64)


def _train_cached(name: str, train_fn) -> diffusion.DenoiserModel:
    CACHE.mkdir(exist_ok=True)
    path = CACHE / f"{name}.ckpt"
    if not path.exists():
        model = train_fn()
        diffusion.save_checkpoint(model, path)
    return diffusion.load_checkpoint(path)


def _train_point_model(kind: str, data_seed: int, train_seed: int) -> diffusion.DenoiserModel:
    data = synth_data.make_dataset(kind, 4096, data_seed)
    schedule = diffusion.make_schedule(1000, "linear-beta")
    cfg = TrainConfig(steps=20000, batch_size=128, lr=2e-4, seed=train_seed)
    return diffusion.train(
        data.points, POINT_ARCH, cfg, schedule, domain_tag=kind
    ).model


@pytest.fixture(scope="session")
def cr_model():
    return _train_cached("cr_4096_s1_t10", lambda: _train_point_model("cr", 1, 10))


@pytest.fixture(scope="session")
def pr_model():
    return _train_cached("pr_4096_s2_t11", lambda: _train_point_model("pr", 2, 11))


@pytest.fixture(scope="session")
def tm_model():
    return _train_cached("tm_4096_s3_t21", lambda: _train_point_model("tm", 3, 21))


# ---------------------------------------------------------------------------
# Document-patch domains: unpaired noisy/clean stroke patches
# ---------------------------------------------------------------------------

DOC_NOISE = synth_data.DegradeConfig(gaussian_sigma=5 / 255, speckle_sigma=5 / 255)
DOC_IMAGE_SIZE = 64
DOC_WINDOW = 16
DOC_STRIDE = 8
DOC_TRAIN_IMAGES = 430  # 430 images x 49 patches > 20k patches per domain


def stroke_patches(first_seed: int, n_images: int, degrade_seed: int | None = None):
    """Slide-window patches from freshly rendered stroke images."""
    out = []
    for i in range(n_images):
        img = synth_data.render_strokes(first_seed + i, DOC_IMAGE_SIZE, DOC_IMAGE_SIZE, 0.1)
        if degrade_seed is not None:
            cfg = synth_data.DegradeConfig(
                gaussian_sigma=DOC_NOISE.gaussian_sigma,
                speckle_sigma=DOC_NOISE.speckle_sigma,
                seed=degrade_seed + i,
            )
            img = synth_data.degrade(img, cfg)
        grid = patches.slide_window(img.pixels, DOC_WINDOW, DOC_STRIDE)
        out.append(np.stack(grid.patches))
    return np.concatenate(out)


def _train_patch_model(domain: str) -> diffusion.DenoiserModel:
    if domain == "noisy":
        data = stroke_patches(1000, DOC_TRAIN_IMAGES, degrade_seed=50000)
        seed = 100
    else:
        data = stroke_patches(2000, DOC_TRAIN_IMAGES)
        seed = 101
    assert len(data) >= 20000
    schedule = diffusion.make_schedule(1000, "linear-beta")
    cfg = TrainConfig(steps=8000, batch_size=256, lr=4e-4, seed=seed)
    return diffusion.train(data, PATCH_ARCH, cfg, schedule, domain_tag=domain).model


@pytest.fixture(scope="session")
def noisy_patch_model():
    return _train_cached("doc_noisy_v1", lambda: _train_patch_model("noisy"))


@pytest.fixture(scope="session")
def clean_patch_model():
    return _train_cached("doc_clean_v1", lambda: _train_patch_model("clean"))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains or integrates real models")
