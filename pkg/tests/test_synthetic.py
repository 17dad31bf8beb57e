import numpy as np
import pytest

from priorguide.errors import SpecError
from priorguide.evaluation import class_similarity
from priorguide.synthetic import SyntheticCorpusSpec, generate_synthetic


class TestSpec:
    @pytest.mark.parametrize(
        "kw",
        [
            {"n_classes": 1},
            {"n_pairs": 5},
            {"shared_per_pair": 0},
            {"shared_per_sentence": (0, 1)},
            {"min_length": 2},
            {"discriminative_prob": 0.0},
            {"spurious_splits": ("dev",)},
            {"filler_vocab": 10},
            {"train_per_class": 0},
        ],
    )
    def test_infeasible(self, kw):
        with pytest.raises(SpecError):
            generate_synthetic(SyntheticCorpusSpec(**kw))

    def test_json_round_trip(self):
        spec = SyntheticCorpusSpec(n_classes=6, spurious_splits=("train", "val"))
        assert SyntheticCorpusSpec.from_json(spec.to_json()) == spec


class TestCorpus:
    def test_structure(self, tiny_corpus):
        c = tiny_corpus
        assert c.labels.names == ("intent_0", "intent_1", "intent_2", "intent_3")
        assert c.pairs == [("intent_0", "intent_1"), ("intent_2", "intent_3")]
        assert c.shared["intent_0"] == c.shared["intent_1"]
        assert not set(c.discriminative["intent_0"]) & set(c.discriminative["intent_1"])
        assert c.partner("intent_2") == "intent_3" and c.partner("intent_3") == "intent_2"
        assert [len(s) for s in (c.train, c.val, c.test)] == [48, 16, 24]

    def test_ids_disjoint(self, tiny_corpus):
        ids = [ex.id for ex in tiny_corpus.train + tiny_corpus.val + tiny_corpus.test]
        assert len(ids) == len(set(ids))

    def test_sentences_use_class_vocabulary(self, tiny_corpus):
        c = tiny_corpus
        for ex in c.train + c.test:
            allowed = set(c.class_keyword_list(ex.label)) | set(c.fillers)
            assert set(ex.sentence.words) <= allowed
            assert c.spec.min_length <= len(ex.sentence) <= c.spec.max_length
            assert set(ex.sentence.words) & set(c.shared[ex.label])
            assert c.class_keyword_list(ex.label)

    def test_spurious_cues_only_in_listed_splits(self):
        c = generate_synthetic(SyntheticCorpusSpec(train_per_class=60, test_per_class=60, seed=2))

        def rate(split):
            # Cue words also occur as ordinary fillers, so only rates are comparable.
            return np.mean([bool(set(ex.sentence.words) & set(c.spurious[ex.label])) for ex in split])

        assert rate(c.train) > rate(c.test) + 0.15

    def test_deterministic(self):
        spec = SyntheticCorpusSpec(n_classes=4, n_pairs=2, train_per_class=5, seed=11)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        assert [e.text for e in a.train + a.val + a.test] == [e.text for e in b.train + b.val + b.test]
        other = generate_synthetic(SyntheticCorpusSpec(n_classes=4, n_pairs=2, train_per_class=5, seed=12))
        assert [e.text for e in a.train] != [e.text for e in other.train]

    def test_oracle_matches_lexicon(self, tiny_corpus):
        oracle = tiny_corpus.oracle()
        doc = tiny_corpus.oracle_definition()
        assert doc["lexicon"] == tiny_corpus.lexicon() and doc["plain_lexicon"] == tiny_corpus.plain_lexicon()
        assert oracle.labels == list(tiny_corpus.labels.names)

    def test_pair_blocks_more_similar_after_training(self, trained_model, tiny_corpus):
        sim = class_similarity(trained_model, tiny_corpus.train)
        pair = np.mean([sim[0, 1], sim[2, 3]])
        cross = np.mean([sim[0, 2], sim[0, 3], sim[1, 2], sim[1, 3]])
        assert pair > cross
