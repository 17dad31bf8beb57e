"""Word-deletion perturbation masks (rows of the attribution design matrix)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from priorguide.core import TokenizedSentence
from priorguide.errors import InvalidInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PerturbationMask:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise InvalidInputError("mask bits must be 0 or 1")
        if not any(bits):
            raise InvalidInputError("a mask must keep at least one word")
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def zeros(self) -> int:
        return len(self.bits) - sum(self.bits)


@dataclass(frozen=True)
class MaskPlan:
    masks: tuple[PerturbationMask, ...]
    seed: int
    n_requested: int

    @property
    def d(self) -> int:
        return len(self.masks[0])

    def matrix(self) -> np.ndarray:
        """The n x d design matrix, one mask per row."""
        return np.array([m.bits for m in self.masks], dtype=float)


def zero_count_range(d: int) -> tuple[int, int]:
    """Inclusive range of deleted-word counts for the random block."""
    return 2, d // 2 + 1


def sample_masks(d: int, n: int, seed: int) -> MaskPlan:
    """All ``d`` single-word deletions, then ``n - d`` random multi-word deletions.

    Random masks draw the deletion count uniformly from ``[2, d // 2 + 1]`` and
    the deleted positions uniformly without replacement. Sentences of three
    words or fewer only get the single-word block.
    """
    if d < 1 or n < 1:
        raise InvalidInputError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    if d == 1:
        # The lone single-word deletion would empty the sentence.
        return MaskPlan((PerturbationMask((1,)),), seed, n)
    singles = []
    for i in range(d):
        bits = [1] * d
        bits[i] = 0
        singles.append(PerturbationMask(tuple(bits)))
    if n < d:
        logger.warning("mask budget n=%d below word count d=%d; keeping first %d single masks", n, d, n)
        return MaskPlan(tuple(singles[:n]), seed, n)
    masks = list(singles)
    if d > 3:
        lo, hi = zero_count_range(d)
        rng = np.random.default_rng(seed)
        for _ in range(n - d):
            s = int(rng.integers(lo, hi + 1))
            bits = np.ones(d, dtype=int)
            bits[rng.choice(d, size=s, replace=False)] = 0
            masks.append(PerturbationMask(tuple(bits.tolist())))
    return MaskPlan(tuple(masks), seed, n)


def apply_mask(s: TokenizedSentence, m: PerturbationMask) -> str:
    """Delete masked words and rejoin survivors with single spaces."""
    if len(s.words) != len(m.bits):
        raise InvalidInputError(f"mask length {len(m.bits)} != word count {len(s.words)}")
    return " ".join(w for w, b in zip(s.words, m.bits) if b)
