"""Class-aware attribution priors and explanation-guided training for small text classifiers."""

from priorguide.core import (
    AttributionVector,
    LabeledExample,
    LabelSpace,
    TokenizedSentence,
    aggregate_priors,
    normalize_scores,
    pearson,
    tokenize,
)
from priorguide.errors import PriorGuideError

__version__ = "0.1.0"

__all__ = [
    "AttributionVector",
    "LabeledExample",
    "LabelSpace",
    "PriorGuideError",
    "TokenizedSentence",
    "aggregate_priors",
    "normalize_scores",
    "pearson",
    "tokenize",
]
