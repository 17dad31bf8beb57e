"""Domain types plus score normalization, prior fusion and correlation."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from priorguide.errors import InvalidInputError, UndefinedCorrelationError

logger = logging.getLogger(__name__)

METHODS = ("cap", "lime", "ig", "hybrid", "self")
PROVENANCES = ("original", "adversarial_addition", "adversarial_replacement")

_WORD_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class TokenizedSentence:
    """A sentence split into lowercased words with character spans into ``text``."""

    text: str
    words: tuple[str, ...]
    spans: tuple[tuple[int, int], ...]
    id: str = ""

    def __post_init__(self):
        if len(self.words) != len(self.spans):
            raise InvalidInputError("words and spans differ in length")
        prev_end = -1
        for word, (start, end) in zip(self.words, self.spans):
            if start < prev_end or end <= start:
                raise InvalidInputError("spans must be non-overlapping and increasing")
            if self.text[start:end].lower() != word:
                raise InvalidInputError(f"span {start}:{end} does not slice to {word!r}")
            prev_end = end

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def from_words(cls, words: Sequence[str], id: str = "") -> "TokenizedSentence":
        return tokenize(" ".join(words), id=id)


def tokenize(text: str, id: str = "") -> TokenizedSentence:
    """Whitespace split with lowercasing; spans index the original ``text``."""
    matches = list(_WORD_RE.finditer(text))
    return TokenizedSentence(
        text=text,
        words=tuple(m.group(0).lower() for m in matches),
        spans=tuple(m.span() for m in matches),
        id=id,
    )


@dataclass(frozen=True)
class AttributionVector:
    sentence_id: str
    scores: tuple[float, ...]
    method: str
    normalized: bool = False
    # Stored so a vector is self-describing and misalignment is detectable.
    words: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown attribution method {self.method!r}")
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if self.words is not None:
            object.__setattr__(self, "words", tuple(self.words))
            if len(self.words) != len(self.scores):
                raise InvalidInputError(
                    f"{self.sentence_id}: {len(self.scores)} scores for {len(self.words)} words"
                )
        if self.normalized and any(not (0.0 <= s <= 1.0) for s in self.scores):
            raise InvalidInputError(f"{self.sentence_id}: normalized scores outside [0, 1]")

    def __len__(self) -> int:
        return len(self.scores)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.scores, dtype=float)

    def normalize(self) -> "AttributionVector":
        return AttributionVector(
            self.sentence_id, tuple(normalize_scores(self.scores)), self.method, True, self.words
        )


@dataclass(frozen=True)
class LabelSpace:
    names: tuple[str, ...]
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise InvalidInputError("label names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __iter__(self):
        return iter(self.names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise InvalidInputError(f"label {name!r} not in label space") from None


@dataclass(frozen=True)
class LabeledExample:
    id: str
    text: str
    label: str
    provenance: str = "original"
    source_class: str | None = None
    attack_class: str | None = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise InvalidInputError(f"unknown provenance {self.provenance!r}")

    @property
    def sentence(self) -> TokenizedSentence:
        return tokenize(self.text, id=self.id)


def check_labels(examples: Iterable[LabeledExample], labels: LabelSpace) -> None:
    for ex in examples:
        if ex.label not in labels:
            raise InvalidInputError(f"{ex.id}: label {ex.label!r} not in label space")


def normalize_scores(v: Sequence[float]) -> list[float]:
    """Min-max rescale to [0, 1]. A constant vector maps to all zeros."""
    arr = np.asarray(v, dtype=float)
    if arr.size == 0:
        raise InvalidInputError("cannot normalize an empty score vector")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("score vector contains non-finite entries")
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        if arr.size > 1:
            logger.warning("constant score vector normalized to zeros")
        return [0.0] * arr.size
    out = (arr - lo) / (hi - lo)
    # Guard against 1 + eps from rounding.
    return np.clip(out, 0.0, 1.0).tolist()


def aggregate_priors(priors: Sequence[AttributionVector], mode: str = "mean") -> AttributionVector:
    """Element-wise mean or max over normalized priors of one sentence."""
    if len(priors) < 2:
        raise InvalidInputError("aggregation needs at least two priors")
    if mode not in ("mean", "max"):
        raise InvalidInputError(f"unknown aggregation mode {mode!r}")
    first = priors[0]
    for p in priors:
        if not p.normalized:
            raise InvalidInputError(f"{p.sentence_id}: {p.method} prior is not normalized")
        if p.sentence_id != first.sentence_id:
            raise InvalidInputError("priors refer to different sentences")
        if len(p) != len(first):
            raise InvalidInputError(f"{p.sentence_id}: prior lengths differ")
        if p.words is not None and first.words is not None and p.words != first.words:
            raise InvalidInputError(f"{p.sentence_id}: priors are over different words")
    stacked = np.array([p.scores for p in priors], dtype=float)
    # Sort columns so the floating-point sum does not depend on input order.
    stacked = np.sort(stacked, axis=0)
    agg = stacked.mean(axis=0) if mode == "mean" else stacked.max(axis=0)
    words = next((p.words for p in priors if p.words is not None), None)
    return AttributionVector(first.sentence_id, tuple(np.clip(agg, 0.0, 1.0)), "hybrid", True, words)


def pearson(u: Sequence[float], v: Sequence[float]) -> float:
    a = np.asarray(u, dtype=float)
    b = np.asarray(v, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError("pearson needs two vectors of equal length")
    if a.size < 2:
        raise InvalidInputError("pearson needs at least two points")
    da = a - a.mean()
    db = b - b.mean()
    na = math.sqrt(float(da @ da))
    nb = math.sqrt(float(db @ db))
    if na == 0.0 or nb == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    r = float(da @ db) / (na * nb)
    return max(-1.0, min(1.0, r))
