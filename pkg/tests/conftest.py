import numpy as np
import pytest

from scentgen import dataio, diffusion

RNG_SEED = 20240601


@pytest.fixture(scope="session")
def fixture_dataset():
    """The bundled corpus, loaded once (embedding has a per-row deterministic seed)."""
    vocab, molecules = dataio.load_csv(dataio.bundled_dataset_path())
    return vocab, molecules


@pytest.fixture(scope="session")
def fixture_corpus():
    return dataio.load_corpus(dataio.bundled_dataset_path())


@pytest.fixture()
def rng():
    return np.random.default_rng(RNG_SEED)


@pytest.fixture(scope="session")
def quick_trained(fixture_dataset):
    """A briefly trained model over a slice of the corpus, shared across tests."""
    vocab, molecules = fixture_dataset
    examples = dataio.to_training_examples(molecules[:24], vocab)
    config = diffusion.TrainConfig(steps=200, epochs=40, batch_size=8, seed=5)
    params, metrics = diffusion.train(examples, config)
    return vocab, params
