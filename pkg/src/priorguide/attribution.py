"""Integrated Gradients self-attribution for the toy classifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from priorguide.core import AttributionVector, TokenizedSentence, normalize_scores
from priorguide.errors import AlignmentError, InvalidInputError
from priorguide.toy_model import ToyClassifier, pooled_gradient


@dataclass(frozen=True)
class IgConfig:
    steps: int = 64
    baseline: str = "zero_embedding"
    target: str = "gold_class_probability"
    quadrature: str = "midpoint"
    # Keep signed IG scores instead of magnitudes (ablation switch).
    signed: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidInputError("IG needs at least one step")
        if self.baseline != "zero_embedding":
            raise InvalidInputError(f"unsupported IG baseline {self.baseline!r}")
        if self.target not in ("gold_class_probability", "gold_class_logit"):
            raise InvalidInputError(f"unsupported IG target {self.target!r}")
        if self.quadrature != "midpoint":
            raise InvalidInputError(f"unsupported quadrature {self.quadrature!r}")

    @property
    def output(self) -> str:
        return "probability" if self.target == "gold_class_probability" else "logit"


def midpoints(steps: int) -> np.ndarray:
    return (np.arange(steps) + 0.5) / steps


def integrate_path(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    emb: np.ndarray,
    baseline: np.ndarray | None = None,
    steps: int = 64,
) -> np.ndarray:
    """Generic per-word IG for any ``F`` given its d x l gradient function."""
    emb = np.asarray(emb, dtype=float)
    base = np.zeros_like(emb) if baseline is None else np.asarray(baseline, dtype=float)
    diff = emb - base
    total = np.zeros_like(emb)
    for mu in midpoints(steps):
        total += grad_fn(base + mu * diff)
    return np.sum(diff * total / steps, axis=1)


def integrated_gradients(
    model: ToyClassifier, s: TokenizedSentence | Sequence[str], target_class: int, cfg: IgConfig | None = None
) -> np.ndarray:
    """Signed per-word IG scores against the zero-embedding baseline.

    With mean pooling every word shares the pooled-input gradient, so the
    whole straight-line path is evaluated as one batch of pooled vectors.
    """
    cfg = cfg or IgConfig()
    idx = model.encode(s)
    return _ig_from_indices(model, idx, target_class, cfg.steps, cfg.output)


def _ig_from_indices(model: ToyClassifier, idx: np.ndarray, target: int, steps: int, output: str) -> np.ndarray:
    if len(idx) == 0:
        raise InvalidInputError("cannot attribute an empty sentence")
    emb = model.embedding[idx]
    xbar = emb.mean(axis=0)
    path = midpoints(steps)[:, None] * xbar
    G = pooled_gradient(model, path, target, output).mean(axis=0)
    return emb @ G / len(idx)


def tokens_to_words(token_scores: Sequence[float], alignment: Sequence[int], n_words: int | None = None) -> list[float]:
    """Sum token scores into their words; words without tokens score 0."""
    if len(token_scores) != len(alignment):
        raise AlignmentError("every token needs exactly one word index")
    if any(a is None or a < 0 for a in alignment):
        raise AlignmentError("token without a word in the alignment")
    size = n_words if n_words is not None else (max(alignment) + 1 if alignment else 0)
    if any(a >= size for a in alignment):
        raise AlignmentError("alignment refers past the last word")
    out = [0.0] * size
    for score, word in zip(token_scores, alignment):
        out[word] += float(score)
    return out


def self_attribution(
    model: ToyClassifier, s: TokenizedSentence, target_class: int, cfg: IgConfig | None = None
) -> AttributionVector:
    """Normalized IG magnitudes (signed scores when ``cfg.signed``)."""
    cfg = cfg or IgConfig()
    raw = integrated_gradients(model, s, target_class, cfg)
    # Word-level model: the token alignment is the identity.
    words = tokens_to_words(raw, list(range(len(raw))), len(raw))
    scores = words if cfg.signed else np.abs(words)
    return AttributionVector(s.id, tuple(normalize_scores(scores)), "self", True, s.words)
