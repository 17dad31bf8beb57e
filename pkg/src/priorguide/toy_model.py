"""Mean-pooled embedding classifier with analytic gradients.

``probs = softmax(W2 tanh(W1 mean(E[words]) + b1) + b2)``

Everything runs on batches of pooled vectors ``X`` (rows), so the same
kernels serve single sentences, integration paths and mini-batches.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from priorguide.core import LabelSpace, TokenizedSentence
from priorguide.errors import ArtifactError, InvalidInputError

FORMAT_NAME = "priorguide.toy_model"
FORMAT_VERSION = 1
OOV = "<unk>"
PARAM_NAMES = ("embedding", "hidden_w", "hidden_b", "output_w", "output_b")


@dataclass(frozen=True)
class Vocabulary:
    """Sorted word list; index 0 is reserved for out-of-vocabulary words."""

    words: tuple[str, ...]

    def __post_init__(self):
        if not self.words or self.words[0] != OOV:
            raise InvalidInputError(f"vocabulary must start with {OOV!r}")
        if len(set(self.words)) != len(self.words):
            raise InvalidInputError("vocabulary words must be unique")
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    @classmethod
    def build(cls, sentences: Iterable[TokenizedSentence | Sequence[str]]) -> "Vocabulary":
        seen = set()
        for s in sentences:
            seen.update(s.words if isinstance(s, TokenizedSentence) else s)
        seen.discard(OOV)
        return cls((OOV, *sorted(seen)))

    def __len__(self) -> int:
        return len(self.words)

    def index(self, word: str) -> int:
        return self._index.get(word, 0)

    def encode(self, words: Sequence[str]) -> np.ndarray:
        return np.array([self.index(w) for w in words], dtype=np.int64)


@dataclass
class ToyClassifier:
    vocab: Vocabulary
    labels: LabelSpace
    embedding: np.ndarray  # |V| x l
    hidden_w: np.ndarray  # h x l
    hidden_b: np.ndarray  # h
    output_w: np.ndarray  # C x h
    output_b: np.ndarray  # C

    @property
    def width(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden(self) -> int:
        return self.hidden_w.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ToyClassifier":
        return copy.deepcopy(self)

    def encode(self, s: TokenizedSentence | Sequence[str]) -> np.ndarray:
        words = s.words if isinstance(s, TokenizedSentence) else s
        return self.vocab.encode(words)

    def to_json(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "vocab": list(self.vocab.words),
            "labels": list(self.labels.names),
            "shapes": {name: list(getattr(self, name).shape) for name in PARAM_NAMES},
            "activation": "tanh",
            # Python floats serialize as shortest round-trip decimals.
            "weights": {name: getattr(self, name).ravel().tolist() for name in PARAM_NAMES},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ToyClassifier":
        if doc.get("format") != FORMAT_NAME or doc.get("version") != FORMAT_VERSION:
            raise ArtifactError("not a version-1 toy model checkpoint")
        arrays = {}
        for name in PARAM_NAMES:
            shape = tuple(doc["shapes"][name])
            flat = np.array(doc["weights"][name], dtype=float)
            if flat.size != int(np.prod(shape)):
                raise ArtifactError(f"weights for {name} do not match shape {shape}")
            arrays[name] = flat.reshape(shape)
        return cls(Vocabulary(tuple(doc["vocab"])), LabelSpace(tuple(doc["labels"])), **arrays)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ToyClassifier":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class ModelGradients:
    embedding: np.ndarray
    hidden_w: np.ndarray
    hidden_b: np.ndarray
    output_w: np.ndarray
    output_b: np.ndarray
    # d x l gradient w.r.t. each word's input embedding.
    inputs: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, model: ToyClassifier) -> "ModelGradients":
        return cls(**{name: np.zeros_like(p) for name, p in model.params().items()})

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.blocks().values())))

    def scale(self, factor: float) -> None:
        for name in PARAM_NAMES:
            setattr(self, name, getattr(self, name) * factor)

    def add(self, other: "ModelGradients", factor: float = 1.0) -> None:
        for name in PARAM_NAMES:
            getattr(self, name).__iadd__(factor * getattr(other, name))


def init_model(vocab: Vocabulary, classes: LabelSpace, l: int = 32, seed: int = 0, hidden: int = 32) -> ToyClassifier:
    """Uniform(-0.1, 0.1) initialization, reproducible from ``seed``."""
    if len(vocab) == 0 or len(classes) == 0:
        raise InvalidInputError("vocabulary and label space must be non-empty")
    rng = np.random.default_rng(seed)
    c = len(classes)

    def u(*shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    return ToyClassifier(vocab, classes, u(len(vocab), l), u(hidden, l), u(hidden), u(c, hidden), u(c))


def _softmax(o: np.ndarray) -> np.ndarray:
    e = np.exp(o - o.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def pool(model: ToyClassifier, idx: np.ndarray) -> np.ndarray:
    """Mean of the word embeddings; the empty sentence pools to zero."""
    if len(idx) == 0:
        return np.zeros(model.width)
    return model.embedding[idx].mean(axis=0)


def forward_pooled(model: ToyClassifier, X: np.ndarray) -> dict[str, np.ndarray]:
    X = np.atleast_2d(X)
    U = X @ model.hidden_w.T + model.hidden_b
    Z = np.tanh(U)
    O = Z @ model.output_w.T + model.output_b
    return {"X": X, "Z": Z, "O": O, "P": _softmax(O)}


def forward(model: ToyClassifier, s: TokenizedSentence | Sequence[str]) -> np.ndarray:
    return forward_pooled(model, pool(model, model.encode(s)))["P"][0]


def forward_embeddings(model: ToyClassifier, emb: np.ndarray) -> np.ndarray:
    """Class probabilities for explicit per-word input embeddings (d x l)."""
    x = emb.mean(axis=0) if len(emb) else np.zeros(model.width)
    return forward_pooled(model, x)["P"][0]


def predict(model: ToyClassifier, s) -> int:
    # argmax returns the lowest index among ties.
    return int(np.argmax(forward(model, s)))


def _target_matrix(targets, n: int, c: int) -> np.ndarray:
    T = np.zeros((n, c))
    T[np.arange(n), np.broadcast_to(np.asarray(targets), (n,))] = 1.0
    return T


def pooled_gradient(model: ToyClassifier, X: np.ndarray, targets, output: str = "probability") -> np.ndarray:
    """Row-wise gradient of the target probability (or logit) w.r.t. the pooled input."""
    fw = forward_pooled(model, X)
    P, Z = fw["P"], fw["Z"]
    T = _target_matrix(targets, len(P), P.shape[1])
    if output == "probability":
        pt = (P * T).sum(axis=1, keepdims=True)
        d_o = pt * (T - P)
    elif output == "logit":
        d_o = T
    else:
        raise InvalidInputError(f"unknown attribution output {output!r}")
    d_u = (1.0 - Z * Z) * (d_o @ model.output_w)
    return d_u @ model.hidden_w


def grad_wrt_embeddings(
    model: ToyClassifier,
    s: TokenizedSentence | Sequence[str],
    target_class: int,
    output: str = "probability",
    emb: np.ndarray | None = None,
) -> np.ndarray:
    """d x l gradient of the target output w.r.t. each word's embedding.

    Mean pooling spreads the pooled gradient evenly, so every row equals
    ``g / d``. ``emb`` overrides the looked-up embeddings (integration paths).
    """
    if emb is None:
        emb = model.embedding[model.encode(s)]
    d = len(emb)
    if d == 0:
        return np.zeros((0, model.width))
    g = pooled_gradient(model, emb.mean(axis=0), target_class, output)[0]
    return np.tile(g / d, (d, 1))


def _scatter_embedding(model: ToyClassifier, idx_rows: Sequence[np.ndarray], pooled_grads: np.ndarray) -> np.ndarray:
    dE = np.zeros_like(model.embedding)
    for idx, g in zip(idx_rows, pooled_grads):
        if len(idx):
            np.add.at(dE, idx, g / len(idx))
    return dE


def cross_entropy_gradients(
    model: ToyClassifier, idx_rows: Sequence[np.ndarray], golds: Sequence[int]
) -> tuple[float, ModelGradients, np.ndarray]:
    """Mean cross-entropy over a batch, its parameter gradients, and the batch probabilities."""
    X = np.array([pool(model, idx) for idx in idx_rows])
    fw = forward_pooled(model, X)
    P, Z = fw["P"], fw["Z"]
    n = len(P)
    golds = np.asarray(golds)
    loss = float(np.mean(-np.log(np.maximum(P[np.arange(n), golds], 1e-12))))
    d_o = (P - _target_matrix(golds, n, P.shape[1])) / n
    d_u = (1.0 - Z * Z) * (d_o @ model.output_w)
    dX = d_u @ model.hidden_w
    grads = ModelGradients(
        embedding=_scatter_embedding(model, idx_rows, dX),
        hidden_w=d_u.T @ X,
        hidden_b=d_u.sum(axis=0),
        output_w=d_o.T @ Z,
        output_b=d_o.sum(axis=0),
    )
    return loss, grads, P


def train_step_gradients(model: ToyClassifier, s: TokenizedSentence | Sequence[str], gold_label: str | int) -> ModelGradients:
    """Exact cross-entropy gradients for one example."""
    gold = gold_label if isinstance(gold_label, (int, np.integer)) else model.labels.index(gold_label)
    idx = model.encode(s)
    _, grads, _ = cross_entropy_gradients(model, [idx], [int(gold)])
    X = pool(model, idx)
    fw = forward_pooled(model, X)
    d_o = fw["P"] - _target_matrix([int(gold)], 1, fw["P"].shape[1])
    d_u = (1.0 - fw["Z"] ** 2) * (d_o @ model.output_w)
    g = (d_u @ model.hidden_w)[0]
    grads.inputs = np.tile(g / max(len(idx), 1), (len(idx), 1))
    return grads


def directional_backward(
    model: ToyClassifier,
    X: np.ndarray,
    V: np.ndarray,
    targets,
    row_weights: np.ndarray | None = None,
    output: str = "probability",
) -> tuple[np.ndarray, dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """Gradients of ``phi = sum_n w_n * V_n . grad_X F(X_n)``.

    ``phi`` is a directional derivative of the target output, computed by a
    tangent forward pass; reverse-mode through that pass yields its
    derivative w.r.t. parameters, inputs ``X`` and directions ``V``.
    Returns ``(phi_rows, param_grads, dX, dV)``.
    """
    W1, b1, W2 = model.hidden_w, model.hidden_b, model.output_w
    X = np.atleast_2d(X)
    V = np.atleast_2d(V)
    n = len(X)
    w = np.ones(n) if row_weights is None else np.asarray(row_weights, dtype=float)
    U = X @ W1.T + b1
    Z = np.tanh(U)
    S = 1.0 - Z * Z
    P = _softmax(Z @ W2.T + model.output_b)
    Ud = V @ W1.T
    Zd = S * Ud
    Od = Zd @ W2.T
    T = _target_matrix(targets, n, P.shape[1])

    if output == "probability":
        pt = (P * T).sum(axis=1, keepdims=True)
        od_t = (Od * T).sum(axis=1, keepdims=True)
        p_od = (P * Od).sum(axis=1, keepdims=True)
        phi = (pt * (od_t - p_od))[:, 0]
        q_bar = pt * (T - P)
        p_bar = T * (od_t - p_od) - pt * Od
        o_bar = P * (p_bar - (P * p_bar).sum(axis=1, keepdims=True))
    elif output == "logit":
        phi = (Od * T).sum(axis=1)
        q_bar = T
        o_bar = np.zeros_like(P)
    else:
        raise InvalidInputError(f"unknown attribution output {output!r}")
    q_bar = q_bar * w[:, None]
    o_bar = o_bar * w[:, None]

    zd_bar = q_bar @ W2
    z_bar = o_bar @ W2 - 2.0 * Z * Ud * zd_bar
    ud_bar = S * zd_bar
    u_bar = S * z_bar
    grads = {
        "hidden_w": ud_bar.T @ V + u_bar.T @ X,
        "hidden_b": u_bar.sum(axis=0),
        "output_w": q_bar.T @ Zd + o_bar.T @ Z,
        "output_b": o_bar.sum(axis=0),
    }
    return phi, grads, u_bar @ W1, ud_bar @ W1
