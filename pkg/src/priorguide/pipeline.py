"""Corpus-level prior extraction and fusion."""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Mapping, Sequence

from priorguide.attribution import IgConfig
from priorguide.cap_solver import CapConfig, cap_extract
from priorguide.core import AttributionVector, LabeledExample, LabelSpace, aggregate_priors
from priorguide.errors import InvalidInputError
from priorguide.lime_prior import LimeConfig, lime_extract
from priorguide.oracle import Oracle, PromptTemplate
from priorguide.toy_model import ToyClassifier
from priorguide.training import self_priors


def sentence_seed(seed: int, sentence_id: str) -> int:
    """Mask-plan seed for one sentence, stable across runs and processing order."""
    return (seed * 1_000_003 + zlib.crc32(sentence_id.encode("utf-8"))) % (2**32)


def extract_priors(
    examples: Sequence[LabeledExample],
    method: str,
    *,
    oracle: Oracle | None = None,
    labels: LabelSpace | None = None,
    cap: CapConfig | None = None,
    lime: LimeConfig | None = None,
    model: ToyClassifier | None = None,
    ig: IgConfig | None = None,
    workers: int = 1,
) -> dict[str, AttributionVector]:
    """Raw priors for every example, keyed by id, in input order.

    ``workers > 1`` overlaps oracle requests; results do not depend on it.
    """
    if method == "ig":
        if model is None:
            raise InvalidInputError("IG priors need a trained model")
        return self_priors(model, examples, ig)
    if oracle is None:
        raise InvalidInputError(f"{method} priors need an oracle")
    if method == "cap":
        base = cap or CapConfig()
        if labels is not None and base.template.label_aware and base.template.labels is None:
            base = replace(base, template=replace(base.template, labels=labels))

        def one(ex: LabeledExample) -> AttributionVector:
            return cap_extract(ex.sentence, ex.label, oracle, replace(base, seed=sentence_seed(base.seed, ex.id)))

    elif method == "lime":
        base_l = lime or LimeConfig()

        def one(ex: LabeledExample) -> AttributionVector:
            return lime_extract(ex.sentence, ex.label, oracle, replace(base_l, seed=sentence_seed(base_l.seed, ex.id)))

    else:
        raise InvalidInputError(f"unknown prior method {method!r}")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = list(pool.map(one, examples))
    else:
        vectors = [one(ex) for ex in examples]
    return {ex.id: v for ex, v in zip(examples, vectors)}


def normalize_all(priors: Mapping[str, AttributionVector]) -> dict[str, AttributionVector]:
    return {k: v if v.normalized else v.normalize() for k, v in priors.items()}


def fuse_priors(prior_sets: Sequence[Mapping[str, AttributionVector]], mode: str = "mean") -> dict[str, AttributionVector]:
    """Normalize each source and aggregate per sentence; ids missing from any source are dropped."""
    if len(prior_sets) < 2:
        raise InvalidInputError("fusion needs at least two prior sets")
    normed = [normalize_all(p) for p in prior_sets]
    ids = [k for k in normed[0] if all(k in p for p in normed[1:])]
    return {k: aggregate_priors([p[k] for p in normed], mode) for k in ids}
