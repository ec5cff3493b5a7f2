import numpy as np
import pytest

from simulmma import tasks
from simulmma.kernels import compiled_available
from simulmma.model import ModelConfig
from simulmma.train import TrainConfig, train

BACKENDS = ["python"] + (["compiled"] if compiled_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def copy_pairs(n=50, seed=0, vocab=8):
    return tasks.generate(tasks.TaskSpec(kind="copy", vocab_size=vocab, min_len=3, max_len=6, seed=seed), n)


TINY_MODEL = dict(d_model=16, ffn_dim=32, future_ffn_dim=32)


def tiny_train_config(epochs, seed=0, stage2=0, lambdas=()):
    return TrainConfig(stage1_epochs=epochs, stage2_epochs=stage2, batch_size=10, lr=1e-2, warmup=20,
                       lambdas=lambdas, seed=seed)


@pytest.fixture(scope="session")
def copy_model():
    """Plain model trained to convergence on a 50-sentence copy task."""
    pairs = copy_pairs()
    result = train(pairs, ModelConfig(**TINY_MODEL), tiny_train_config(100))
    return result.base, pairs
