"""Desk-scale comparison of vanilla and hybrid-prior training on a synthetic corpus."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from priorguide.adversarial import (
    AdversarialSet,
    build_adversarial_set,
    keywords_by_class,
    select_adversarial_targets,
)
from priorguide.core import AttributionVector
from priorguide.evaluation import (
    OverlapMatrix,
    accuracy,
    error_level_counts,
    faithfulness,
    keyword_overlap_matrix,
    misclass_vs_overlap,
)
from priorguide.pipeline import extract_priors, fuse_priors, normalize_all
from priorguide.synthetic import SyntheticCorpus, SyntheticCorpusSpec, generate_synthetic
from priorguide.toy_model import Vocabulary, init_model
from priorguide.training import TrainConfig, train


@dataclass
class DeskConfig:
    corpus: SyntheticCorpusSpec = field(default_factory=SyntheticCorpusSpec)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    train: TrainConfig = field(default_factory=TrainConfig)
    width: int = 32
    hidden: int = 32
    # LIME lists feed the overlap diagnostic; CAP lists drive attack generation.
    lime_keywords_k: int = 3
    cap_keywords_k: int = 5
    n_targets: int = 1
    pool: int = 1
    ratio: float = 0.2
    # "best_val" trains both aggregations and keeps the better validation accuracy.
    fusion: str = "best_val"
    levels: int = 4
    attack_seed: int = 0


@dataclass
class Prepared:
    corpus: SyntheticCorpus
    cap: dict[str, AttributionVector]
    lime: dict[str, AttributionVector]
    lime_overlap: OverlapMatrix
    cap_overlap: OverlapMatrix
    adversarial: AdversarialSet


@dataclass
class RunMetrics:
    accuracy: float
    adversarial_accuracy: float
    addition_accuracy: float
    replacement_accuracy: float
    comprehensiveness: float
    sufficiency: float
    error_levels: list[int]


def prepare(cfg: DeskConfig) -> Prepared:
    corpus = generate_synthetic(cfg.corpus)
    oracle = corpus.oracle()
    cap = extract_priors(corpus.train, "cap", oracle=oracle, labels=corpus.labels)
    lime = extract_priors(corpus.train, "lime", oracle=oracle)
    lime_kw = keywords_by_class(corpus.train, normalize_all(lime), cfg.lime_keywords_k)
    cap_kw = keywords_by_class(corpus.train, normalize_all(cap), cfg.cap_keywords_k)
    lime_ov = keyword_overlap_matrix({c: set(k.keywords) for c, k in lime_kw.items()})
    cap_ov = keyword_overlap_matrix({c: set(k.keywords) for c, k in cap_kw.items()})
    plan = select_adversarial_targets(cap_ov, cfg.n_targets, cfg.pool, cfg.attack_seed)
    adv = build_adversarial_set(corpus.test, cap_kw, plan, seed=cfg.attack_seed)
    return Prepared(corpus, cap, lime, lime_ov, cap_ov, adv)


def _metrics(model, prep: Prepared, cfg: DeskConfig) -> RunMetrics:
    test = prep.corpus.test
    adv = prep.adversarial
    faith = faithfulness(model, test, cfg.ratio)
    rows = misclass_vs_overlap(model, test, prep.lime_overlap, cfg.levels)
    return RunMetrics(
        accuracy=accuracy(model, test),
        adversarial_accuracy=accuracy(model, adv.examples),
        addition_accuracy=accuracy(model, adv.by_mode("addition")),
        replacement_accuracy=accuracy(model, adv.by_mode("replacement")),
        comprehensiveness=faith.comprehensiveness,
        sufficiency=faith.sufficiency,
        error_levels=error_level_counts(rows, cfg.levels),
    )


def run_seed(prep: Prepared, cfg: DeskConfig, seed: int) -> dict[str, RunMetrics]:
    corpus = prep.corpus
    vocab = Vocabulary.build(ex.sentence for ex in corpus.train)
    init = init_model(vocab, corpus.labels, cfg.width, seed, cfg.hidden)
    base_cfg = replace(cfg.train, beta=0.0, seed=seed)
    base = train(init, corpus.train, None, base_cfg, corpus.val).model
    ig = extract_priors(corpus.train, "ig", model=base)
    guided_cfg = replace(cfg.train, seed=seed)
    modes = ("mean", "max") if cfg.fusion == "best_val" else (cfg.fusion,)
    best = None
    for mode in modes:
        hybrid = fuse_priors([prep.lime, prep.cap, ig], mode)
        model = train(init, corpus.train, hybrid, guided_cfg, corpus.val).model
        val = accuracy(model, corpus.val)
        if best is None or val > best[0]:
            best = (val, model)
    guided = best[1]
    return {"base": _metrics(base, prep, cfg), "hybrid": _metrics(guided, prep, cfg)}


def run(cfg: DeskConfig | None = None, prep: Prepared | None = None) -> list[dict[str, RunMetrics]]:
    cfg = cfg or DeskConfig()
    prep = prep or prepare(cfg)
    return [run_seed(prep, cfg, s) for s in cfg.seeds]


def summarize(results: Sequence[dict[str, RunMetrics]]) -> dict[str, dict[str, float]]:
    out = {}
    for arm in ("base", "hybrid"):
        rows = [r[arm] for r in results]
        out[arm] = {
            name: float(np.mean([getattr(m, name) for m in rows]))
            for name in (
                "accuracy",
                "adversarial_accuracy",
                "addition_accuracy",
                "replacement_accuracy",
                "comprehensiveness",
                "sufficiency",
            )
        }
    return out
