import os
from pathlib import Path

import pytest

from sirenq.imageio import read_image
from sirenq.linalg import STREAM_INIT, make_rng
from sirenq.model import init_siren, load_checkpoint, save_checkpoint
from sirenq.trainer import TrainConfig, make_grid_dataset, train

DATA_DIR = Path(__file__).parent / "data"
CAMERA_PGM = DATA_DIR / "camera.pgm"

# Shared checkpoint configuration: the end-to-end criteria all evaluate one
# model trained with the pipeline defaults on the bundled 256x256 camera
# image. Cached across sessions only when SIRENQ_TEST_CACHE is set, since
# full-batch training takes a while on small machines.
TRAIN_SEED = 7
TRAIN_ITERS = 2000
_CACHE_NAME = f"camera256-w256-d3-i{TRAIN_ITERS}-lr1e-4-seed{TRAIN_SEED}-v1.ckpt"


@pytest.fixture(scope="session")
def camera_image():
    return read_image(str(CAMERA_PGM))


@pytest.fixture(scope="session")
def camera_dataset(camera_image):
    return make_grid_dataset(camera_image)


@pytest.fixture(scope="session")
def trained_camera(camera_dataset):
    """(model, dataset) for the shared trained checkpoint."""
    cache_dir = os.environ.get("SIRENQ_TEST_CACHE")
    if cache_dir:
        cached = Path(cache_dir) / _CACHE_NAME
        if cached.exists():
            return load_checkpoint(str(cached)), camera_dataset
    rng = make_rng(TRAIN_SEED, STREAM_INIT)
    model = init_siren(2, 256, 1, 3, rng=rng)
    cfg = TrainConfig(iterations=TRAIN_ITERS, learning_rate=1e-4, seed=TRAIN_SEED)
    model, _ = train(model, camera_dataset, cfg)
    if cache_dir:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, str(Path(cache_dir) / _CACHE_NAME))
    return model, camera_dataset
