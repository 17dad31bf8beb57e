import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from priorguide.core import tokenize
from priorguide.errors import InvalidInputError
from priorguide.masking import PerturbationMask, apply_mask, sample_masks, zero_count_range


class TestSampleMasks:
    def test_single_block_first(self):
        plan = sample_masks(5, 100, seed=1)
        M = plan.matrix()
        assert M.shape == (100, 5)
        np.testing.assert_array_equal(M[:5], 1 - np.eye(5))

    def test_random_block_zero_counts_d5(self):
        plan = sample_masks(5, 200, seed=2)
        zeros = [m.zeros for m in plan.masks[5:]]
        assert set(zeros) <= {2, 3}
        # Both ends of the range get drawn.
        assert set(zeros) == {2, 3}

    def test_deterministic(self):
        assert sample_masks(7, 50, 3) == sample_masks(7, 50, 3)
        assert sample_masks(7, 50, 3) != sample_masks(7, 50, 4)

    @pytest.mark.parametrize("d", [2, 3])
    def test_short_sentences_single_block_only(self, d):
        plan = sample_masks(d, 100, seed=0)
        assert len(plan.masks) == d
        assert all(m.zeros == 1 for m in plan.masks)

    def test_single_word_sentence(self):
        plan = sample_masks(1, 100, seed=0)
        assert plan.matrix().tolist() == [[1.0]]

    def test_budget_below_d_truncates(self, caplog):
        with caplog.at_level(logging.WARNING):
            plan = sample_masks(6, 4, seed=0)
        assert len(plan.masks) == 4
        assert "below word count" in caplog.text
        np.testing.assert_array_equal(plan.matrix(), (1 - np.eye(6))[:4])

    def test_bad_arguments(self):
        with pytest.raises(InvalidInputError):
            sample_masks(0, 10, 0)
        with pytest.raises(InvalidInputError):
            sample_masks(3, 0, 0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 120), st.integers(0, 2**31))
    def test_invariants(self, d, n, seed):
        plan = sample_masks(d, n, seed)
        M = plan.matrix()
        assert M.shape[1] == d
        assert np.all(M.sum(axis=1) >= 1)
        if d > 1:
            k = min(d, n)
            singles = M[:k]
            assert np.all(singles.sum(axis=1) == d - 1)
            assert sorted(np.argmin(singles, axis=1).tolist()) == list(range(k))
        if d > 3 and n > d:
            lo, hi = zero_count_range(d)
            zeros = d - M[d:].sum(axis=1)
            assert np.all((zeros >= lo) & (zeros <= hi))
            assert len(M) == n


class TestApplyMask:
    s = tokenize("set an alarm")

    @pytest.mark.parametrize(
        "bits, text", [((1, 0, 1), "set alarm"), ((1, 1, 1), "set an alarm"), ((0, 0, 1), "alarm")]
    )
    def test_examples(self, bits, text):
        assert apply_mask(self.s, PerturbationMask(bits)) == text

    def test_two_words(self):
        assert apply_mask(tokenize("a b"), PerturbationMask((0, 1))) == "b"

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            apply_mask(self.s, PerturbationMask((1, 0)))

    def test_mask_invariants(self):
        with pytest.raises(InvalidInputError):
            PerturbationMask((0, 0))
        with pytest.raises(InvalidInputError):
            PerturbationMask((1, 2))

    @given(st.lists(st.integers(0, 1), min_size=3, max_size=3).filter(any))
    def test_word_count_is_popcount(self, bits):
        out = apply_mask(self.s, PerturbationMask(tuple(bits)))
        assert len(out.split()) == sum(bits)
