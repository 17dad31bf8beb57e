"""Perturbation baseline prior: locality-weighted ridge fit on plain-prompt probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from priorguide.cap_solver import oracle_probabilities, solve_ridge, target_score
from priorguide.core import AttributionVector, TokenizedSentence
from priorguide.errors import InvalidInputError
from priorguide.masking import PerturbationMask, sample_masks
from priorguide.oracle import Oracle, PromptTemplate


@dataclass
class LimeConfig:
    n_samples: int = 100
    kernel_width: float = 0.25
    lam: float = 0.1
    seed: int = 0
    template: PromptTemplate = field(default_factory=PromptTemplate.plain)
    # "prob" fits raw probabilities; "z" applies the class-aware target transform.
    target: str = "prob"

    def __post_init__(self):
        if not self.kernel_width > 0:
            raise InvalidInputError("kernel_width must be positive")
        if self.target not in ("prob", "z"):
            raise InvalidInputError(f"unknown LIME target {self.target!r}")


def lime_weight(m: PerturbationMask, kernel_width: float = 0.25) -> float:
    """``exp(-f^2 / width^2)`` with ``f`` the fraction of deleted words."""
    f = m.zeros / len(m)
    if math.isinf(kernel_width):
        return 1.0
    return math.exp(-(f * f) / (kernel_width * kernel_width))


def lime_extract(
    s: TokenizedSentence, gold_label: str, oracle: Oracle, cfg: LimeConfig | None = None
) -> AttributionVector:
    cfg = cfg or LimeConfig()
    if len(s) == 0:
        raise InvalidInputError(f"{s.id}: cannot attribute an empty sentence")
    plan = sample_masks(len(s), cfg.n_samples, cfg.seed)
    probs = oracle_probabilities(s, gold_label, plan, oracle, cfg.template)
    targets = probs if cfg.target == "prob" else np.array([target_score(p) for p in probs])
    weights = np.array([lime_weight(m, cfg.kernel_width) for m in plan.masks])
    alpha = solve_ridge(plan.matrix(), targets, cfg.lam, weights=weights)
    return AttributionVector(s.id, tuple(alpha), "lime", False, s.words)
