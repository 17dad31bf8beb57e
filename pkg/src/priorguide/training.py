"""Explanation-guided training: cross-entropy plus attribution alignment.

The alignment term compares a prior with the model's normalized IG
magnitudes. Its gradient is taken through the IG path sum exactly (a
second-order pass per quadrature point) while the min-max normalization
constants are held fixed within a step.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from priorguide.attribution import IgConfig, midpoints, self_attribution
from priorguide.core import AttributionVector, LabeledExample
from priorguide.errors import InvalidInputError
from priorguide.toy_model import (
    ModelGradients,
    ToyClassifier,
    cross_entropy_gradients,
    directional_backward,
    pooled_gradient,
    predict,
)


@dataclass
class TrainConfig:
    beta: float = 1.0
    learning_rate: float = 0.5
    batch_size: int = 16
    epochs: int = 50
    clip_norm: float = 1.0
    seed: int = 0
    # IG used inside the loss; fewer steps than evaluation-time attribution.
    ig: IgConfig = field(default_factory=lambda: IgConfig(steps=8))
    early_stop_patience: int = 10
    # Cross-entropy-only epochs before the alignment term switches on. A
    # freshly initialized toy model has no useful attributions to align, and
    # the alignment gradient would hold it on the initial plateau.
    align_warmup_epochs: int = 15

    def __post_init__(self):
        if self.beta < 0:
            raise InvalidInputError("beta must be non-negative")
        if not self.clip_norm > 0:
            raise InvalidInputError("clip_norm must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidInputError("batch_size must be positive and epochs non-negative")
        if self.align_warmup_epochs < 0 or self.early_stop_patience < 1:
            raise InvalidInputError("align_warmup_epochs must be non-negative and patience positive")

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["ig"] = asdict(self.ig)
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "TrainConfig":
        doc = dict(doc)
        if "ig" in doc and isinstance(doc["ig"], Mapping):
            doc["ig"] = IgConfig(**doc["ig"])
        return cls(**doc)


@dataclass
class EpochStats:
    epoch: int
    total: float
    ce: float
    alignment: float
    train_accuracy: float
    val_accuracy: float | None


@dataclass
class BatchStats:
    total: float
    ce: float
    alignment: float
    grad_norm: float
    clipped_norm: float


@dataclass
class TrainReport:
    epochs: list[EpochStats]
    model: ToyClassifier
    seed: int
    best_epoch: int
    batches: list[BatchStats] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "config": self.config,
            "epochs": [asdict(e) for e in self.epochs],
            "batches": [asdict(b) for b in self.batches],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def cross_entropy(probs: Sequence[float], gold_index: int) -> float:
    return -math.log(max(float(probs[gold_index]), 1e-12))


def attribution_loss(prior: AttributionVector | Sequence[float], self_attr: AttributionVector | Sequence[float]) -> float:
    """Mean squared difference over words."""
    for v in (prior, self_attr):
        if isinstance(v, AttributionVector) and not v.normalized:
            raise InvalidInputError(f"{v.sentence_id}: alignment needs normalized vectors")
    if isinstance(prior, AttributionVector) and isinstance(self_attr, AttributionVector):
        if prior.sentence_id != self_attr.sentence_id:
            raise InvalidInputError("prior and self-attribution refer to different sentences")
    a = np.asarray(prior.scores if isinstance(prior, AttributionVector) else prior, dtype=float)
    b = np.asarray(self_attr.scores if isinstance(self_attr, AttributionVector) else self_attr, dtype=float)
    if a.shape != b.shape or a.size == 0:
        raise InvalidInputError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.mean((a - b) ** 2))


def alignment_gradients(
    model: ToyClassifier, idx: np.ndarray, target: int, prior: np.ndarray, ig: IgConfig
) -> tuple[float, ModelGradients]:
    """Alignment loss for one sentence and its gradient (normalizer constants frozen)."""
    d = len(idx)
    emb = model.embedding[idx]
    xbar = emb.mean(axis=0)
    mu = midpoints(ig.steps)
    path = mu[:, None] * xbar
    G = pooled_gradient(model, path, target, ig.output).mean(axis=0)
    raw = emb @ G / d
    mag = raw if ig.signed else np.abs(raw)
    lo, hi = mag.min(), mag.max()
    grads = ModelGradients.zeros_like(model)
    if hi == lo:
        # Constant attribution normalizes to zeros; no gradient through the rule.
        return float(np.mean(prior**2)), grads
    span = hi - lo
    a_s = (mag - lo) / span
    loss = float(np.mean((prior - a_s) ** 2))
    dmag = 2.0 / d * (a_s - prior) / span
    c = dmag if ig.signed else dmag * np.sign(raw)
    direction = c @ emb / d
    K = len(mu)
    _, pg, dX, dV = directional_backward(
        model, path, np.tile(direction, (K, 1)), target, row_weights=np.full(K, 1.0 / K), output=ig.output
    )
    for name, g in pg.items():
        setattr(grads, name, g)
    d_xbar = mu @ dX
    d_dir = dV.sum(axis=0)
    per_word = d_xbar / d + np.outer(c / d, d_dir)
    np.add.at(grads.embedding, idx, per_word)
    return loss, grads


def _clip(grads: ModelGradients, max_norm: float) -> tuple[float, float]:
    norm = grads.norm()
    if norm > max_norm:
        grads.scale(max_norm / norm)
        return norm, grads.norm()
    return norm, norm


def accuracy_on(model: ToyClassifier, examples: Sequence[LabeledExample]) -> float:
    if not examples:
        raise InvalidInputError("accuracy needs a non-empty example set")
    hits = sum(predict(model, ex.sentence) == model.labels.index(ex.label) for ex in examples)
    return hits / len(examples)


def _train_accuracy(probs_rows: list[np.ndarray], golds: list[int]) -> float:
    return float(np.mean([int(np.argmax(p)) == g for p, g in zip(probs_rows, golds)]))


def train(
    model: ToyClassifier,
    train_set: Sequence[LabeledExample],
    priors: Mapping[str, AttributionVector] | None = None,
    cfg: TrainConfig | None = None,
    val_set: Sequence[LabeledExample] | None = None,
) -> TrainReport:
    """Mini-batch SGD on ``CE + beta * alignment`` with global-norm clipping.

    Early stopping watches validation accuracy when ``val_set`` is given and
    the returned model is the best-validation checkpoint. Examples without a
    prior contribute cross-entropy only.
    """
    cfg = cfg or TrainConfig()
    if not train_set:
        raise InvalidInputError("training set is empty")
    priors = priors or {}
    model = model.copy()
    idx_rows = [model.encode(ex.sentence) for ex in train_set]
    golds = [model.labels.index(ex.label) for ex in train_set]
    prior_rows: list[np.ndarray | None] = []
    for ex, idx in zip(train_set, idx_rows):
        p = priors.get(ex.id)
        if p is None:
            prior_rows.append(None)
            continue
        if not p.normalized:
            raise InvalidInputError(f"{ex.id}: prior must be normalized")
        if len(p) != len(idx):
            raise InvalidInputError(f"{ex.id}: prior has {len(p)} scores for {len(idx)} words")
        prior_rows.append(p.as_array())

    rng = np.random.default_rng(cfg.seed)
    n = len(train_set)
    epochs: list[EpochStats] = []
    batches: list[BatchStats] = []
    best_val, best_epoch, best_model, stale = -1.0, 0, model.copy(), 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        seen_probs, seen_golds = [], []
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            ce, grads, P = cross_entropy_gradients(model, [idx_rows[i] for i in batch], [golds[i] for i in batch])
            seen_probs.extend(P)
            seen_golds.extend(golds[i] for i in batch)
            align = 0.0
            if cfg.beta > 0 and epoch > cfg.align_warmup_epochs:
                guided = [i for i in batch if prior_rows[i] is not None and len(idx_rows[i]) > 0]
                if guided:
                    total_align = ModelGradients.zeros_like(model)
                    for i in guided:
                        loss_i, g_i = alignment_gradients(model, idx_rows[i], golds[i], prior_rows[i], cfg.ig)
                        align += loss_i
                        total_align.add(g_i)
                    align /= len(guided)
                    grads.add(total_align, cfg.beta / len(guided))
            total = ce + cfg.beta * align
            pre, post = _clip(grads, cfg.clip_norm)
            for name, g in grads.blocks().items():
                getattr(model, name).__isub__(cfg.learning_rate * g)
            batches.append(BatchStats(total, ce, align, pre, post))
            sums += (total, ce, align)
            n_batches += 1
        val_acc = accuracy_on(model, val_set) if val_set else None
        warming = cfg.beta > 0 and epoch <= cfg.align_warmup_epochs
        if cfg.beta > 0 and epoch == cfg.align_warmup_epochs + 1:
            # The returned checkpoint must come from guided epochs.
            best_val, stale = -1.0, 0
        means = sums / n_batches
        epochs.append(
            EpochStats(epoch, float(means[0]), float(means[1]), float(means[2]), _train_accuracy(seen_probs, seen_golds), val_acc)
        )
        if val_acc is None:
            best_model, best_epoch = model, epoch
            continue
        if val_acc > best_val:
            best_val, best_epoch, best_model, stale = val_acc, epoch, model.copy(), 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience and not warming:
                break
    if cfg.epochs == 0:
        best_model = model
    return TrainReport(epochs, best_model, cfg.seed, best_epoch, batches, cfg.to_json())


def self_priors(
    model: ToyClassifier, examples: Sequence[LabeledExample], ig: IgConfig | None = None
) -> dict[str, AttributionVector]:
    """IG priors from an already-trained model on its training data."""
    out = {}
    for ex in examples:
        s = ex.sentence
        v = self_attribution(model, s, model.labels.index(ex.label), ig)
        out[ex.id] = AttributionVector(ex.id, v.scores, "ig", True, s.words)
    return out


__all__ = [
    "BatchStats",
    "EpochStats",
    "TrainConfig",
    "TrainReport",
    "accuracy_on",
    "alignment_gradients",
    "attribution_loss",
    "cross_entropy",
    "self_priors",
    "train",
]
