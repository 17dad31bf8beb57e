"""Accuracy, rationale faithfulness, and keyword-overlap diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from priorguide.attribution import IgConfig, self_attribution
from priorguide.core import AttributionVector, LabeledExample, TokenizedSentence
from priorguide.errors import InvalidInputError, UndefinedSimilarityError
from priorguide.toy_model import ToyClassifier, forward, pool, predict

DEFAULT_RATIO = 0.2
DEFAULT_LEVELS = 4


@dataclass(frozen=True)
class Rationale:
    sentence_id: str
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if list(idx) != sorted(set(idx)) or any(i < 0 for i in idx):
            raise InvalidInputError("rationale indices must be unique, sorted and non-negative")
        object.__setattr__(self, "indices", idx)


@dataclass(frozen=True)
class OverlapMatrix:
    classes: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.classes), len(self.classes)):
            raise InvalidInputError("overlap matrix shape does not match class list")
        object.__setattr__(self, "values", v)

    def get(self, a: str, b: str) -> float:
        return float(self.values[self.classes.index(a), self.classes.index(b)])


@dataclass(frozen=True)
class ErrorRow:
    gold: str
    predicted: str
    overlap: float
    level: int


def extract_rationale(attr: AttributionVector, ratio: float = DEFAULT_RATIO) -> Rationale:
    """Top ``ceil(ratio * d)`` words; ties go to the lower index."""
    if not (0.0 < ratio <= 1.0):
        raise InvalidInputError(f"rationale ratio must lie in (0, 1], got {ratio}")
    d = len(attr)
    k = min(d, math.ceil(ratio * d - 1e-12))
    scores = attr.as_array()
    # Stable sort on -score keeps lower indices first within ties.
    top = np.argsort(-scores, kind="stable")[:k]
    return Rationale(attr.sentence_id, tuple(sorted(int(i) for i in top)))


def _prob(model: ToyClassifier, words: Sequence[str], y: int) -> float:
    return float(forward(model, list(words))[y])


def _check_rationale(s: TokenizedSentence, r: Rationale) -> None:
    if any(i >= len(s) for i in r.indices):
        raise InvalidInputError(f"{s.id}: rationale index out of range")


def comprehensiveness(model: ToyClassifier, s: TokenizedSentence, y: int, r: Rationale) -> float:
    """Relative confidence drop after deleting the rationale words."""
    _check_rationale(s, r)
    keep = set(r.indices)
    full = _prob(model, s.words, y)
    rest = _prob(model, [w for i, w in enumerate(s.words) if i not in keep], y)
    return (full - rest) / full


def sufficiency(model: ToyClassifier, s: TokenizedSentence, y: int, r: Rationale) -> float:
    """Relative confidence drop when only the rationale words remain."""
    _check_rationale(s, r)
    if not r.indices:
        raise InvalidInputError(f"{s.id}: sufficiency needs a non-empty rationale")
    full = _prob(model, s.words, y)
    only = _prob(model, [s.words[i] for i in r.indices], y)
    return (full - only) / full


def accuracy(model: ToyClassifier, examples: Sequence[LabeledExample]) -> float:
    if not examples:
        raise InvalidInputError("accuracy needs a non-empty example set")
    return sum(predict(model, ex.sentence) == model.labels.index(ex.label) for ex in examples) / len(examples)


@dataclass(frozen=True)
class FaithfulnessResult:
    comprehensiveness: float
    sufficiency: float
    ratio: float
    n: int


def faithfulness(
    model: ToyClassifier,
    examples: Sequence[LabeledExample],
    ratio: float = DEFAULT_RATIO,
    ig: IgConfig | None = None,
) -> FaithfulnessResult:
    """Mean Com/Suf over ``examples`` using rationales from the model's own IG on its prediction."""
    if not examples:
        raise InvalidInputError("faithfulness needs a non-empty example set")
    com, suf = [], []
    for ex in examples:
        s = ex.sentence
        y = predict(model, s)
        r = extract_rationale(self_attribution(model, s, y, ig), ratio)
        com.append(comprehensiveness(model, s, y, r))
        suf.append(sufficiency(model, s, y, r))
    return FaithfulnessResult(float(np.mean(com)), float(np.mean(suf)), ratio, len(examples))


def keyword_overlap_matrix(class_keywords: Mapping[str, set | Sequence[str]]) -> OverlapMatrix:
    """Pairwise Jaccard similarity of class keyword sets."""
    classes = tuple(class_keywords)
    sets = []
    for c in classes:
        kw = set(class_keywords[c])
        if not kw:
            raise InvalidInputError(f"class {c!r} has an empty keyword set")
        sets.append(kw)
    n = len(classes)
    v = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            v[i, j] = v[j, i] = len(sets[i] & sets[j]) / len(sets[i] | sets[j])
    return OverlapMatrix(classes, v)


def overlap_level(value: float, levels: int = DEFAULT_LEVELS) -> int:
    """Equal-width bucket of [0, 1]; 1.0 lands in the top bucket."""
    if levels < 1:
        raise InvalidInputError("levels must be positive")
    return min(int(value * levels), levels - 1)


def misclass_vs_overlap(
    model: ToyClassifier,
    test_set: Sequence[LabeledExample],
    overlap: OverlapMatrix,
    levels: int = DEFAULT_LEVELS,
) -> list[ErrorRow]:
    rows = []
    for ex in test_set:
        pred = model.labels.names[predict(model, ex.sentence)]
        if pred == ex.label:
            continue
        ov = overlap.get(ex.label, pred)
        rows.append(ErrorRow(ex.label, pred, ov, overlap_level(ov, levels)))
    return rows


def error_level_counts(rows: Sequence[ErrorRow], levels: int = DEFAULT_LEVELS) -> list[int]:
    counts = [0] * levels
    for r in rows:
        counts[r.level] += 1
    return counts


def class_similarity(model: ToyClassifier, dataset: Sequence[LabeledExample]) -> np.ndarray:
    """Cosine similarity of per-class mean sentence embeddings (label-space order)."""
    C = len(model.labels)
    sums = np.zeros((C, model.width))
    counts = np.zeros(C)
    for ex in dataset:
        c = model.labels.index(ex.label)
        sums[c] += pool(model, model.encode(ex.sentence))
        counts[c] += 1
    if np.any(counts == 0):
        missing = [model.labels.names[i] for i in np.flatnonzero(counts == 0)]
        raise InvalidInputError(f"classes without examples: {missing}")
    means = sums / counts[:, None]
    norms = np.linalg.norm(means, axis=1)
    if np.any(norms == 0):
        bad = [model.labels.names[i] for i in np.flatnonzero(norms == 0)]
        raise UndefinedSimilarityError(f"zero mean embedding for classes {bad}")
    unit = means / norms[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    sim = (sim + sim.T) / 2
    np.fill_diagonal(sim, 1.0)
    return sim
