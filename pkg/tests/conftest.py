import numpy as np
import pytest

import saliencybench as sb


@pytest.fixture(scope="session")
def small_dataset():
    """Compact 32x32 dataset shared by training-dependent tests."""
    return sb.generate_dataset(sb.SceneParams(side=32, seed=7), 340, n_test=40,
                               n_eval=20)


@pytest.fixture(scope="session")
def small_model(small_dataset):
    """A quickly trained but competent 32x32 classifier."""
    ds = small_dataset
    model = sb.train(ds.images("train"), ds.labels("train"),
                     ds.images("eval"), ds.labels("eval"),
                     sb.ModelConfig(side=32, epochs=3, seed=3))
    assert model.test_balanced_accuracy > 0.9, "fixture model failed to train"
    return model


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))
