import pytest
import numpy as np
from fastapi.testclient import TestClient

from app.main import app
from app.core.cache import clear_caches
from app.core.models import ModelManager
from app.services.ablation import run_session
from app.services.datasets import SynthSpec, save_dataset, synth_generate
from app.services.mctn import ModelConfig, VariantSpec
from app.services.trainer import TrainConfig

TINY_DIMS = {"model_dim": 4, "hidden_dim": 4, "attention_dim": 3}


@pytest.fixture
def rng():
    """Seeded generator shared by a test."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    """Model dims small enough for finite-difference checks and fast training."""
    return ModelConfig(seed=0, **TINY_DIMS)


@pytest.fixture
def tiny_train_config():
    """Two quick epochs of Adam on the tiny dims."""
    return TrainConfig(seed=0, epochs=2, batch_size=8, patience=5, learning_rate=1e-2, **TINY_DIMS)


def _synth(dims, seed=3, n=24, length=4, task="regression"):
    return synth_generate(SynthSpec(
        name=f"tiny-{len(dims)}", n=n, length=length, dims=dims, seed=seed,
        latent_dim=2, check_samples=50, task=task,
    ))


@pytest.fixture
def bimodal_dataset():
    """24-sample synthetic language/visual dataset (dims 3 and 2)."""
    return _synth([3, 2])


@pytest.fixture
def trimodal_dataset():
    """24-sample synthetic language/visual/acoustic dataset (dims 3, 2, 2)."""
    return _synth([3, 2, 2])


@pytest.fixture
def classification_dataset():
    """Binary-label synthetic bimodal dataset."""
    return _synth([3, 2], task="classification")


@pytest.fixture
def bimodal_manifest(tmp_path, bimodal_dataset):
    """The bimodal dataset written to disk; yields the manifest path."""
    return save_dataset(bimodal_dataset, tmp_path / "bimodal")


@pytest.fixture
def trimodal_manifest(tmp_path, trimodal_dataset):
    return save_dataset(trimodal_dataset, tmp_path / "trimodal")


@pytest.fixture(scope="module")
def trained_checkpoint(tmp_path_factory):
    """
    Checkpoint of variant (a) language⇄visual trained for two epochs.

    Module-scoped so API and eval tests train once.
    """
    root = tmp_path_factory.mktemp("trained")
    dataset = _synth([3, 2])
    manifest = save_dataset(dataset, root / "data")
    spec = VariantSpec(id="a", source="language", target1="visual")
    config = TrainConfig(seed=0, epochs=2, batch_size=8, patience=5, learning_rate=1e-2, **TINY_DIMS)
    result = run_session(spec, dataset, config, root / "run")
    return {"checkpoint": result.checkpoint, "manifest": manifest, "root": root, "result": result}


@pytest.fixture
def test_client():
    """FastAPI test client with no model loaded."""
    ModelManager.reset()
    clear_caches()
    yield TestClient(app)
    ModelManager.reset()


@pytest.fixture
def loaded_client(trained_checkpoint):
    """
    FastAPI test client serving the trained checkpoint.

    Cleanup:
        Resets the ModelManager singleton after the test
    """
    ModelManager.reset()
    ModelManager.get_instance().load_bundle(trained_checkpoint["checkpoint"])
    yield TestClient(app)
    ModelManager.reset()
    clear_caches()
