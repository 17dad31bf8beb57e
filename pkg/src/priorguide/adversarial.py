"""Adversarial test sets by keyword addition and keyword replacement."""

from __future__ import annotations

import logging
import re
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from priorguide.core import AttributionVector, LabeledExample
from priorguide.errors import InvalidInputError, PriorGuideError
from priorguide.evaluation import OverlapMatrix
from priorguide.oracle import Oracle

logger = logging.getLogger(__name__)

# Default target counts for the three intent benchmarks, by label-space size.
DATASET_N_TARGETS = {"hwu64": 1, "banking77": 2, "clinc150": 3}
DEFAULT_POOL = 5

ADDITION_TEMPLATE = (
    "Task: Generate a keyword addition adversarial example for the following text by adding keywords "
    "from a adversarial class without changing the classification result.\n"
    "Original text: {original_text}\n"
    "Original class: {original_label}\n"
    "Adversarial class: {adversarial_label}\n"
    "Adversarial class keywords: {adversarial_keywords}\n"
    "Adversarial class example sentences: {adversarial_sentence}\n"
    "Requirements:\n"
    "1. Preserve the original meaning as much as possible\n"
    "2. Add 1–2 keywords from the source class, but avoid making the intent overly explicit\n"
    "3. Ensure the new text is still classified as the target class\n"
    "4. Ensure the text remains natural and fluent\n"
    "5. Only return the modified text, nothing else\n"
    "Adversarial example:"
)

REPLACEMENT_TEMPLATE = (
    "Task: Generate a keyword replacement adversarial example by replacing original class keywords "
    "in the following text with keywords from a adversarial class.\n"
    "Original text: {original_text}\n"
    "Original class: {original_label}\n"
    "Adversarial class: {adversarial_label}\n"
    "Adversarial class keywords: {adversarial_keywords}\n"
    "Adversarial class example sentences: {adversarial_sentence}\n"
    "Requirements:\n"
    "1. Replace target keywords with suitable original-class keywords, and optionally add new ones\n"
    "2. Preserve the original sentence structure (e.g., questions, conjunctions)\n"
    "3. Ensure the new text remains semantically coherent and realistic\n"
    "4. Ensure the modified text is classified into the new target class\n"
    "5. Only return the modified text, nothing else\n"
    "Adversarial example:"
)


@dataclass(frozen=True)
class ClassKeywords:
    cls: str
    keywords: tuple[str, ...]
    scores: tuple[float, ...]
    example_sentences: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.keywords)) != len(self.keywords):
            raise InvalidInputError(f"{self.cls}: duplicate keywords")
        if len(self.keywords) != len(self.scores):
            raise InvalidInputError(f"{self.cls}: keyword and score counts differ")
        if any(b > a for a, b in zip(self.scores, self.scores[1:])):
            raise InvalidInputError(f"{self.cls}: keyword scores must be non-increasing")

    @property
    def K(self) -> int:
        return len(self.keywords)


@dataclass(frozen=True)
class AttackPlan:
    targets: dict[str, tuple[str, ...]]
    n_targets: int
    seed: int


@dataclass(frozen=True)
class GeneratorBackend:
    kind: str = "rule_based"
    oracle: Oracle | None = None
    max_tokens: int = 64

    def __post_init__(self):
        if self.kind not in ("rule_based", "oracle_prompted"):
            raise InvalidInputError(f"unknown generator backend {self.kind!r}")
        if self.kind == "oracle_prompted" and self.oracle is None:
            raise InvalidInputError("oracle_prompted generation needs an oracle")


@dataclass(frozen=True)
class SkipRecord:
    id: str
    mode: str
    source_class: str
    target_class: str
    reason: str


def example_rng(seed: int, *keys: str) -> np.random.Generator:
    """Per-example stream, independent of processing order."""
    return np.random.default_rng([seed, *(zlib.crc32(k.encode("utf-8")) for k in keys)])


def class_keywords(
    priors: Sequence[AttributionVector], K: int, cls: str = "", example_sentences: Sequence[str] = ()
) -> ClassKeywords:
    """Mean normalized score per distinct word over its occurrences; top ``K``."""
    if not priors:
        raise InvalidInputError("class_keywords needs at least one prior")
    if K < 1:
        raise InvalidInputError("K must be positive")
    totals: dict[str, float] = defaultdict(float)
    counts: dict[str, int] = defaultdict(int)
    for p in priors:
        if p.words is None:
            raise InvalidInputError(f"{p.sentence_id}: prior carries no words")
        v = p if p.normalized else p.normalize()
        for w, s in zip(v.words, v.scores):
            totals[w] += s
            counts[w] += 1
    ranked = sorted(((totals[w] / counts[w], w) for w in totals), key=lambda t: (-t[0], t[1]))[:K]
    return ClassKeywords(cls, tuple(w for _, w in ranked), tuple(s for s, _ in ranked), tuple(example_sentences))


def keywords_by_class(
    examples: Sequence[LabeledExample], priors: Mapping[str, AttributionVector], K: int, n_examples: int = 3
) -> dict[str, ClassKeywords]:
    grouped: dict[str, list[AttributionVector]] = defaultdict(list)
    texts: dict[str, list[str]] = defaultdict(list)
    for ex in examples:
        if ex.id in priors:
            grouped[ex.label].append(priors[ex.id])
            texts[ex.label].append(ex.text)
    return {
        c: class_keywords(grouped[c], K, c, texts[c][:n_examples]) for c in sorted(grouped)
    }


def select_adversarial_targets(
    overlap: OverlapMatrix, n_targets: int, pool: int = DEFAULT_POOL, seed: int = 0
) -> AttackPlan:
    """Sample targets uniformly from each class's ``pool`` highest-overlap peers."""
    if n_targets < 1 or pool < n_targets:
        raise InvalidInputError("need n_targets >= 1 and pool >= n_targets")
    classes = overlap.classes
    rng = np.random.default_rng(seed)
    targets = {}
    for i, src in enumerate(classes):
        others = [j for j in range(len(classes)) if j != i]
        # Highest overlap first; class order breaks ties.
        others.sort(key=lambda j: (-overlap.values[i, j], j))
        candidates = others[: min(pool, len(others))]
        k = min(n_targets, len(candidates))
        chosen = rng.choice(len(candidates), size=k, replace=False) if k else []
        targets[src] = tuple(classes[candidates[c]] for c in sorted(chosen))
    return AttackPlan(targets, n_targets, seed)


def _render(template: str, ex: LabeledExample, target: ClassKeywords) -> str:
    return template.format(
        original_text=ex.text,
        original_label=ex.label,
        adversarial_label=target.cls,
        adversarial_keywords=", ".join(target.keywords),
        adversarial_sentence=" | ".join(target.example_sentences),
    )


def _oracle_text(backend: GeneratorBackend, prompt: str) -> str | None:
    try:
        text = backend.oracle.generate(prompt, backend.max_tokens).strip()
    except PriorGuideError as exc:
        logger.warning("oracle generation failed (%s); falling back to rule_based", exc)
        return None
    if not text:
        logger.warning("oracle returned empty text; falling back to rule_based")
        return None
    return text.splitlines()[0].strip()


def gen_addition(
    ex: LabeledExample, target: ClassKeywords, backend: GeneratorBackend | None = None, seed: int = 0
) -> LabeledExample:
    """Insert 1-2 target-class keywords; the gold label is kept."""
    backend = backend or GeneratorBackend()
    if target.cls == ex.label:
        raise InvalidInputError("adversarial target must differ from the example's label")
    if not target.keywords:
        raise InvalidInputError(f"no keywords for class {target.cls!r}")
    new_id = f"{ex.id}::add::{target.cls}"
    text = None
    if backend.kind == "oracle_prompted":
        text = _oracle_text(backend, _render(ADDITION_TEMPLATE, ex, target))
    if text is None:
        rng = example_rng(seed, ex.id, target.cls, "add")
        count = min(int(rng.integers(1, 3)), target.K)
        words = ex.text.split()
        pos = int(rng.integers(0, len(words) + 1))
        text = " ".join(words[:pos] + list(target.keywords[:count]) + words[pos:])
    return LabeledExample(new_id, text, ex.label, "adversarial_addition", ex.label, target.cls)


def gen_replacement(
    ex: LabeledExample,
    source_keywords: ClassKeywords,
    target: ClassKeywords,
    backend: GeneratorBackend | None = None,
    seed: int = 0,
) -> LabeledExample | SkipRecord:
    """Swap source-class keywords for target-class ones; the label moves to the target."""
    backend = backend or GeneratorBackend()
    if target.cls == ex.label:
        raise InvalidInputError("adversarial target must differ from the example's label")
    new_id = f"{ex.id}::rep::{target.cls}"
    if backend.kind == "oracle_prompted":
        text = _oracle_text(backend, _render(REPLACEMENT_TEMPLATE, ex, target))
        if text is not None:
            return LabeledExample(new_id, text, target.cls, "adversarial_replacement", ex.label, target.cls)
    source = set(source_keywords.keywords)
    # Shared keywords would survive the swap, so they are not valid substitutes.
    substitutes = [w for w in target.keywords if w not in source]
    words = ex.text.split()
    hits = [i for i, w in enumerate(words) if w.lower() in source]
    if not hits:
        return SkipRecord(ex.id, "replacement", ex.label, target.cls, "no source-class keyword in text")
    if not substitutes:
        return SkipRecord(ex.id, "replacement", ex.label, target.cls, "target keywords all shared with source")
    rng = example_rng(seed, ex.id, target.cls, "rep")
    for i in hits:
        words[i] = substitutes[int(rng.integers(0, len(substitutes)))]
    return LabeledExample(new_id, " ".join(words), target.cls, "adversarial_replacement", ex.label, target.cls)


@dataclass
class AdversarialSet:
    examples: list[LabeledExample] = field(default_factory=list)
    skips: list[SkipRecord] = field(default_factory=list)

    def by_mode(self, mode: str) -> list[LabeledExample]:
        return [e for e in self.examples if e.provenance == f"adversarial_{mode}"]


def build_adversarial_set(
    test_set: Sequence[LabeledExample],
    keywords: Mapping[str, ClassKeywords],
    plan: AttackPlan,
    modes: Sequence[str] = ("addition", "replacement"),
    backend: GeneratorBackend | None = None,
    seed: int = 0,
) -> AdversarialSet:
    out = AdversarialSet()
    for ex in test_set:
        for tgt in plan.targets.get(ex.label, ()):
            if tgt not in keywords:
                out.skips.append(SkipRecord(ex.id, "any", ex.label, tgt, "no keyword list for target class"))
                continue
            if "addition" in modes:
                out.examples.append(gen_addition(ex, keywords[tgt], backend, seed))
            if "replacement" in modes:
                if ex.label not in keywords:
                    out.skips.append(SkipRecord(ex.id, "replacement", ex.label, tgt, "no keyword list for source class"))
                    continue
                res = gen_replacement(ex, keywords[ex.label], keywords[tgt], backend, seed)
                (out.skips if isinstance(res, SkipRecord) else out.examples).append(res)
    return out


def contains_keyword(text: str, keywords: Sequence[str]) -> bool:
    words = {w.lower() for w in re.findall(r"\S+", text)}
    return any(k in words for k in keywords)


def is_subsequence(needle: Sequence[str], hay: Sequence[str]) -> bool:
    it = iter(hay)
    return all(any(w == h for h in it) for w in needle)


__all__ = [
    "ADDITION_TEMPLATE",
    "AdversarialSet",
    "AttackPlan",
    "ClassKeywords",
    "GeneratorBackend",
    "REPLACEMENT_TEMPLATE",
    "SkipRecord",
    "build_adversarial_set",
    "class_keywords",
    "contains_keyword",
    "gen_addition",
    "gen_replacement",
    "is_subsequence",
    "keywords_by_class",
    "select_adversarial_targets",
]
