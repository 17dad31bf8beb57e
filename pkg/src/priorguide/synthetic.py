"""Synthetic confusable-class intent corpus.

Classes come in confusable pairs. Both classes of a pair draw from the
same shared keywords; each class also owns discriminative keywords that
its partner never uses. The remaining positions are neutral filler
words. Each class may also favour a few filler words (spurious cues) in
chosen splits; the oracle lexicon gives them no weight. A matching :class:`~priorguide.oracle.LexiconOracle` definition
stands in for the label-probability LLM.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from priorguide.core import LabeledExample, LabelSpace
from priorguide.errors import SpecError
from priorguide.oracle import LexiconOracle


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    n_classes: int = 8
    n_pairs: int = 4
    shared_per_pair: int = 3
    discriminative_per_class: int = 2
    filler_vocab: int = 60
    train_per_class: int = 40
    val_per_class: int = 10
    test_per_class: int = 20
    min_length: int = 5
    max_length: int = 9
    shared_per_sentence: tuple[int, int] = (1, 2)
    discriminative_prob: float = 0.85
    # Class-correlated fillers and the splits they are injected into.
    spurious_per_class: int = 2
    spurious_prob: float = 0.3
    spurious_splits: tuple[str, ...] = ("train",)
    # Oracle lexicon weights.
    discriminative_weight: float = 3.0
    shared_weight: float = 1.5
    plain_bias: float = 2.0
    # Label-free affinity weights; shared words dominate, as they are more frequent.
    plain_discriminative_weight: float = 1.0
    plain_shared_weight: float = 3.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_classes < 2:
            raise SpecError("need at least two classes")
        if self.n_pairs < 0 or 2 * self.n_pairs > self.n_classes:
            raise SpecError("confusable pairs need two distinct classes each")
        if self.shared_per_pair < 1 or self.discriminative_per_class < 1:
            raise SpecError("every pair needs a shared keyword and every class a discriminative one")
        lo, hi = self.shared_per_sentence
        if not (1 <= lo <= hi <= self.shared_per_pair):
            raise SpecError("shared_per_sentence must lie within [1, shared_per_pair]")
        if self.min_length < hi + 1 or self.max_length < self.min_length:
            raise SpecError(f"sentence length must fit {hi} shared plus one discriminative keyword")
        if self.filler_vocab < 1:
            raise SpecError("filler vocabulary must be non-empty")
        if not (0.0 < self.discriminative_prob <= 1.0):
            raise SpecError("discriminative_prob must lie in (0, 1]")
        if self.spurious_per_class < 0 or not (0.0 <= self.spurious_prob <= 1.0):
            raise SpecError("spurious_per_class must be non-negative and spurious_prob in [0, 1]")
        if not set(self.spurious_splits) <= {"train", "val", "test"}:
            raise SpecError("spurious_splits must name train, val or test")
        if self.spurious_per_class * self.n_classes > self.filler_vocab:
            raise SpecError("not enough filler words for the spurious cues")
        if min(self.train_per_class, self.test_per_class) < 1 or self.val_per_class < 0:
            raise SpecError("split sizes must be positive")

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["shared_per_sentence"] = list(self.shared_per_sentence)
        doc["spurious_splits"] = list(self.spurious_splits)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SyntheticCorpusSpec":
        doc = dict(doc)
        if "shared_per_sentence" in doc:
            doc["shared_per_sentence"] = tuple(doc["shared_per_sentence"])
        if "spurious_splits" in doc:
            doc["spurious_splits"] = tuple(doc["spurious_splits"])
        return cls(**doc)


@dataclass
class SyntheticCorpus:
    spec: SyntheticCorpusSpec
    labels: LabelSpace
    train: list[LabeledExample]
    val: list[LabeledExample]
    test: list[LabeledExample]
    pairs: list[tuple[str, str]]
    shared: dict[str, tuple[str, ...]]  # class -> shared keywords of its pair
    discriminative: dict[str, tuple[str, ...]]
    fillers: tuple[str, ...]
    spurious: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def class_keyword_list(self, cls: str) -> tuple[str, ...]:
        return self.discriminative[cls] + self.shared.get(cls, ())

    def _weights(self, disc_w: float, shared_w: float) -> dict[str, dict[str, float]]:
        lex = {}
        for c in self.labels:
            weights = {w: disc_w for w in self.discriminative[c]}
            weights.update({w: shared_w for w in self.shared.get(c, ())})
            lex[c] = weights
        return lex

    def lexicon(self) -> dict[str, dict[str, float]]:
        return self._weights(self.spec.discriminative_weight, self.spec.shared_weight)

    def plain_lexicon(self) -> dict[str, dict[str, float]]:
        return self._weights(self.spec.plain_discriminative_weight, self.spec.plain_shared_weight)

    def oracle_definition(self) -> dict:
        return self.oracle().to_json()

    def oracle(self, probability_floor: float = 1e-6) -> LexiconOracle:
        return LexiconOracle(
            self.lexicon(),
            list(self.labels.names),
            self.spec.plain_bias,
            probability_floor=probability_floor,
            plain_lexicon=self.plain_lexicon(),
        )

    def partner(self, cls: str) -> str | None:
        for a, b in self.pairs:
            if cls == a:
                return b
            if cls == b:
                return a
        return None


def _class_names(n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"intent_{i:0{width}d}" for i in range(n)]


def _sentence(
    rng: np.random.Generator,
    spec: SyntheticCorpusSpec,
    shared: Sequence[str],
    disc: Sequence[str],
    fillers: Sequence[str],
    spurious: Sequence[str] = (),
) -> str:
    length = int(rng.integers(spec.min_length, spec.max_length + 1))
    words: list[str] = []
    if spurious and rng.random() < spec.spurious_prob:
        words.append(spurious[int(rng.integers(0, len(spurious)))])
    if shared:
        lo, hi = spec.shared_per_sentence
        k = int(rng.integers(lo, hi + 1))
        words += [shared[i] for i in rng.choice(len(shared), size=k, replace=False)]
    if rng.random() < spec.discriminative_prob:
        words.append(disc[int(rng.integers(0, len(disc)))])
    while len(words) < length:
        words.append(fillers[int(rng.integers(0, len(fillers)))])
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order)


def generate_synthetic(spec: SyntheticCorpusSpec | None = None) -> SyntheticCorpus:
    spec = spec or SyntheticCorpusSpec()
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    names = _class_names(spec.n_classes)
    pairs = [(names[2 * p], names[2 * p + 1]) for p in range(spec.n_pairs)]
    shared: dict[str, tuple[str, ...]] = {}
    for p, (a, b) in enumerate(pairs):
        kw = tuple(f"sh{p}k{j}" for j in range(spec.shared_per_pair))
        shared[a] = shared[b] = kw
    disc = {c: tuple(f"dk{i}k{j}" for j in range(spec.discriminative_per_class)) for i, c in enumerate(names)}
    fillers = tuple(f"fw{j}" for j in range(spec.filler_vocab))
    k = spec.spurious_per_class
    spurious = {c: fillers[i * k : (i + 1) * k] for i, c in enumerate(names)}

    splits: dict[str, list[LabeledExample]] = {"train": [], "val": [], "test": []}
    sizes = {"train": spec.train_per_class, "val": spec.val_per_class, "test": spec.test_per_class}
    for split, per_class in sizes.items():
        for c in names:
            for k in range(per_class):
                cues = spurious[c] if split in spec.spurious_splits else ()
                text = _sentence(rng, spec, shared.get(c, ()), disc[c], fillers, cues)
                splits[split].append(LabeledExample(f"{split}-{c}-{k:03d}", text, c))
    return SyntheticCorpus(
        spec, LabelSpace(tuple(names)), splits["train"], splits["val"], splits["test"], pairs, shared, disc, fillers, spurious
    )
