import socket

import numpy as np
import pytest

from priorguide.core import LabelSpace
from priorguide.synthetic import SyntheticCorpusSpec, generate_synthetic
from priorguide.toy_model import ToyClassifier, Vocabulary, init_model


def random_model(seed=0, n_words=12, width=5, hidden=4, n_classes=3, scale=1.0):
    """Small model with O(1) weights, so gradients are far from zero."""
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(("<unk>", *(f"w{i}" for i in range(n_words))))
    labels = LabelSpace(tuple(f"c{i}" for i in range(n_classes)))
    m = init_model(vocab, labels, width, seed, hidden)
    for name, p in m.params().items():
        p[...] = rng.normal(0.0, scale, size=p.shape)
    return m


@pytest.fixture
def small_model() -> ToyClassifier:
    return random_model()


@pytest.fixture(scope="session")
def tiny_corpus():
    spec = SyntheticCorpusSpec(
        n_classes=4, n_pairs=2, train_per_class=12, val_per_class=4, test_per_class=6, filler_vocab=20, seed=3
    )
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def trained_model(tiny_corpus):
    from priorguide.training import TrainConfig, train

    vocab = Vocabulary.build(ex.sentence for ex in tiny_corpus.train)
    init = init_model(vocab, tiny_corpus.labels, 32, seed=0, hidden=32)
    cfg = TrainConfig(beta=0.0, epochs=40, batch_size=8, seed=0)
    report = train(init, tiny_corpus.train, None, cfg, tiny_corpus.val)
    # Guard against a model left on the initial plateau, where IG is nearly linear.
    assert max(e.train_accuracy for e in report.epochs) >= 0.9
    return report.model


@pytest.fixture(autouse=True, scope="session")
def no_network():
    """Any attempt to open a real connection fails the test that made it."""

    def refuse(self, *args, **kwargs):
        raise RuntimeError("network access attempted during tests")

    mp = pytest.MonkeyPatch()
    mp.setattr(socket.socket, "connect", refuse)
    mp.setattr(socket.socket, "connect_ex", refuse)
    mp.setattr(socket, "create_connection", refuse)
    yield
    mp.undo()
