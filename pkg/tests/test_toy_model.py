import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model
from priorguide.core import LabelSpace, tokenize
from priorguide.errors import ArtifactError, InvalidInputError
from priorguide.toy_model import (
    OOV,
    PARAM_NAMES,
    ToyClassifier,
    Vocabulary,
    cross_entropy_gradients,
    directional_backward,
    forward,
    forward_embeddings,
    forward_pooled,
    grad_wrt_embeddings,
    init_model,
    pooled_gradient,
    predict,
    train_step_gradients,
)

H = 1e-4


def rel_err(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-8))


def fd_param(model, name, loss_fn):
    p = getattr(model, name)
    out = np.zeros_like(p)
    for i in np.ndindex(p.shape):
        old = p[i]
        p[i] = old + H
        up = loss_fn()
        p[i] = old - H
        down = loss_fn()
        p[i] = old
        out[i] = (up - down) / (2 * H)
    return out


class TestVocabulary:
    def test_build_sorted_with_oov_first(self):
        v = Vocabulary.build([tokenize("b a c"), ["a", "d"]])
        assert v.words == (OOV, "a", "b", "c", "d")

    def test_oov_maps_to_zero(self):
        v = Vocabulary.build([["x"]])
        np.testing.assert_array_equal(v.encode(["x", "never"]), [1, 0])

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            Vocabulary(("a", "b"))
        with pytest.raises(InvalidInputError):
            Vocabulary((OOV, "a", "a"))


class TestInit:
    vocab = Vocabulary((OOV, "a", "b"))
    labels = LabelSpace(("x", "y", "z"))

    def test_same_seed_identical(self):
        a = init_model(self.vocab, self.labels, 4, seed=3, hidden=5)
        b = init_model(self.vocab, self.labels, 4, seed=3, hidden=5)
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_different_seeds_differ(self):
        a = init_model(self.vocab, self.labels, 4, seed=3)
        b = init_model(self.vocab, self.labels, 4, seed=4)
        assert not np.array_equal(a.embedding, b.embedding)

    def test_shapes_and_range(self):
        m = init_model(self.vocab, self.labels, 4, seed=0, hidden=6)
        assert m.embedding.shape == (3, 4) and m.hidden_w.shape == (6, 4) and m.output_w.shape == (3, 6)
        assert all(np.all(np.abs(p) <= 0.1) for p in m.params().values())

    def test_empty_inputs(self):
        with pytest.raises(InvalidInputError):
            init_model(self.vocab, LabelSpace(()), 4)


class TestForward:
    @given(st.integers(0, 1000), st.lists(st.sampled_from([f"w{i}" for i in range(14)]), max_size=8))
    @settings(max_examples=40)
    def test_simplex(self, seed, words):
        p = forward(random_model(seed), words)
        assert np.all(p >= 0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_zero_embedding_uniform_iff_equal_biases(self, small_model):
        m = small_model.copy()
        m.embedding[...] = 0.0
        # tanh(hidden_b) would otherwise reach the logits through output_w.
        m.hidden_b[...] = 0.0
        m.output_b[...] = 0.7
        np.testing.assert_allclose(forward(m, ["w1", "w2"]), np.full(3, 1 / 3), rtol=1e-12)
        m.output_b[0] += 0.5
        assert not np.allclose(forward(m, ["w1", "w2"]), 1 / 3)

    def test_empty_sentence_pools_to_zero(self, small_model):
        np.testing.assert_allclose(forward(small_model, []), forward_pooled(small_model, np.zeros(5))["P"][0])

    def test_forward_embeddings_matches_lookup(self, small_model):
        words = ["w3", "w1", "w3"]
        emb = small_model.embedding[small_model.encode(words)]
        np.testing.assert_allclose(forward_embeddings(small_model, emb), forward(small_model, words), rtol=1e-14)

    def test_predict_is_argmax(self, small_model):
        words = ["w0", "w5"]
        assert predict(small_model, words) == int(np.argmax(forward(small_model, words)))


class TestGradWrtEmbeddings:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("output", ["probability", "logit"])
    def test_finite_differences(self, seed, output):
        m = random_model(seed)
        words = ["w1", "w4", "w4", "w7"]
        emb = m.embedding[m.encode(words)].copy()
        target = 1

        def F(e):
            x = e.mean(axis=0)
            fw = forward_pooled(m, x)
            return fw["P"][0, target] if output == "probability" else fw["O"][0, target]

        numeric = np.zeros_like(emb)
        for i in np.ndindex(emb.shape):
            up, down = emb.copy(), emb.copy()
            up[i] += H
            down[i] -= H
            numeric[i] = (F(up) - F(down)) / (2 * H)
        analytic = grad_wrt_embeddings(m, words, target, output)
        assert rel_err(analytic, numeric) <= 1e-4

    def test_rows_equal_for_mean_pool(self, small_model):
        g = grad_wrt_embeddings(small_model, ["w1", "w2", "w3"], 0)
        np.testing.assert_allclose(g, np.tile(g[0], (3, 1)))

    def test_empty(self, small_model):
        assert grad_wrt_embeddings(small_model, [], 0).shape == (0, 5)

    def test_unknown_output(self, small_model):
        with pytest.raises(InvalidInputError):
            pooled_gradient(small_model, np.zeros(5), 0, "entropy")


class TestTrainStepGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_finite_differences_all_blocks(self, seed):
        m = random_model(seed)
        words = ["w2", "w5", "w9", "w5"]

        def loss():
            return -np.log(forward(m, words)[2])

        grads = train_step_gradients(m, words, 2)
        for name in PARAM_NAMES:
            assert rel_err(getattr(grads, name), fd_param(m, name, loss)) <= 1e-4, name

    def test_input_gradient(self, small_model):
        words = ["w2", "w3"]
        grads = train_step_gradients(small_model, words, "c1")
        emb = small_model.embedding[small_model.encode(words)].copy()

        def loss(e):
            return -np.log(forward_embeddings(small_model, e)[1])

        numeric = np.zeros_like(emb)
        for i in np.ndindex(emb.shape):
            up, down = emb.copy(), emb.copy()
            up[i] += H
            down[i] -= H
            numeric[i] = (loss(up) - loss(down)) / (2 * H)
        assert rel_err(grads.inputs, numeric) <= 1e-4

    def test_batch_mean(self, small_model):
        rows = [small_model.encode(["w1", "w2"]), small_model.encode(["w3"])]
        loss, grads, _ = cross_entropy_gradients(small_model, rows, [0, 2])
        g0 = train_step_gradients(small_model, ["w1", "w2"], 0)
        g1 = train_step_gradients(small_model, ["w3"], 2)
        for name in PARAM_NAMES:
            np.testing.assert_allclose(getattr(grads, name), (getattr(g0, name) + getattr(g1, name)) / 2, atol=1e-14)
        expected = -(np.log(forward(small_model, ["w1", "w2"])[0]) + np.log(forward(small_model, ["w3"])[2])) / 2
        assert loss == pytest.approx(expected, rel=1e-12)

    @given(st.integers(0, 1000))
    @settings(max_examples=25)
    def test_finite_norm(self, seed):
        m = random_model(seed, scale=3.0)
        assert np.isfinite(train_step_gradients(m, ["w1", "w8", "w11"], 0).norm())


class TestDirectionalBackward:
    @pytest.mark.parametrize("output", ["probability", "logit"])
    def test_phi_and_gradients_by_finite_differences(self, output):
        m = random_model(4)
        rng = np.random.default_rng(0)
        X = rng.normal(size=(3, 5))
        V = rng.normal(size=(3, 5))
        targets = np.array([0, 2, 1])
        w = np.array([0.5, 1.0, 2.0])
        phi, grads, dX, dV = directional_backward(m, X, V, targets, w, output)
        G = pooled_gradient(m, X, targets, output)
        np.testing.assert_allclose(phi, np.sum(V * G, axis=1), rtol=1e-12)

        def total():
            return float(w @ directional_backward(m, X, V, targets, w, output)[0])

        for name in ("hidden_w", "hidden_b", "output_w", "output_b"):
            assert rel_err(grads[name], fd_param(m, name, total)) <= 1e-4, name
        for arr, analytic in ((X, dX), (V, dV)):
            numeric = np.zeros_like(arr)
            for i in np.ndindex(arr.shape):
                old = arr[i]
                arr[i] = old + H
                up = total()
                arr[i] = old - H
                down = total()
                arr[i] = old
                numeric[i] = (up - down) / (2 * H)
            assert rel_err(analytic, numeric) <= 1e-4


class TestSerialization:
    def test_json_round_trip_exact(self, small_model, tmp_path):
        path = tmp_path / "m.json"
        small_model.save(path)
        back = ToyClassifier.load(path)
        assert back.vocab == small_model.vocab and back.labels == small_model.labels
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(getattr(back, name), getattr(small_model, name))

    def test_rejects_foreign_document(self, small_model):
        doc = small_model.to_json()
        with pytest.raises(ArtifactError):
            ToyClassifier.from_json({**doc, "version": 2})
        doc = json.loads(json.dumps(doc))
        doc["weights"]["hidden_b"] = doc["weights"]["hidden_b"][:-1]
        with pytest.raises(ArtifactError):
            ToyClassifier.from_json(doc)
