import numpy as np
import pytest

from headfilt.errors import LengthMismatch
from headfilt.pipeline import (
    ConfusionSetFilter,
    Sentence,
    check_sentence,
    check_sentences,
    predict_filtered,
    predict_unfiltered,
)
from headfilt.similarity import ConfusionSets, SimilarityVector
from headfilt.vocab import Vocabulary

from oracles import brute_force_filtered_argmax

VOCAB = Vocabulary(["甲", "乙", "丙"])


class FakeScorer:
    """Preset per-position distributions keyed by (sentence id, position)."""

    def __init__(self, vocab, table):
        self.vocab = vocab
        self.table = table

    def position_distribution(self, sentence, i):
        return np.asarray(self.table[(sentence.id, i)], dtype=np.float64)


class TestPredict:
    def test_unfiltered_argmax(self):
        assert predict_unfiltered(np.array([0.1, 0.6, 0.3]), VOCAB) == "乙"

    def test_tie_breaks_to_lowest_index(self):
        assert predict_unfiltered(np.array([0.5, 0.5, 0.0]), VOCAB) == "甲"

    def test_delta(self):
        assert predict_unfiltered(np.array([0.0, 0.0, 1.0]), VOCAB) == "丙"

    def test_binary_filter_overrides(self):
        dist = np.array([0.1, 0.6, 0.3])
        sim = SimilarityVector(np.array([1.0, 0.0, 1.0]), "binary")
        assert predict_filtered(dist, sim, VOCAB) == "丙"

    def test_all_ones_filter_is_identity(self):
        rng = np.random.default_rng(0)
        ones = SimilarityVector(np.ones(3), "binary")
        for _ in range(50):
            dist = rng.dirichlet(np.ones(3))
            assert predict_filtered(dist, ones, VOCAB) == predict_unfiltered(dist, VOCAB)

    def test_uniform_positive_filter_is_identity(self):
        rng = np.random.default_rng(1)
        flat = SimilarityVector(np.full(3, 0.37), "real")
        for _ in range(50):
            dist = rng.dirichlet(np.ones(3))
            assert predict_filtered(dist, flat, VOCAB) == predict_unfiltered(dist, VOCAB)

    def test_positive_scaling_never_changes_choice(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            dist = rng.dirichlet(np.ones(3))
            sim = rng.uniform(0.01, 1.0, size=3)
            base = predict_filtered(dist, SimilarityVector(sim, "real"), VOCAB)
            s1, s2 = rng.uniform(0.1, 40.0, size=2)
            assert predict_filtered(dist * s1, SimilarityVector(sim * s2, "real"),
                                    VOCAB) == base

    def test_zero_similarity_never_predicted(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            dist = rng.dirichlet(np.ones(3))
            sim = (rng.random(3) < 0.5).astype(float)
            sim[rng.integers(0, 3)] = 1.0
            choice = predict_filtered(dist, SimilarityVector(sim, "binary"), VOCAB)
            assert sim[VOCAB.index(choice)] > 0.0

    def test_zero_mass_on_admitted_candidates(self):
        dist = np.array([1.0, 0.0, 0.0])  # delta at an excluded character
        sim = SimilarityVector(np.array([0.0, 1.0, 1.0]), "binary")
        assert predict_filtered(dist, sim, VOCAB) == "乙"

    def test_matches_brute_force_subset_argmax(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            dist = rng.dirichlet(np.ones(3))
            mask = (rng.random(3) < 0.5).astype(float)
            mask[rng.integers(0, 3)] = 1.0
            got = predict_filtered(dist, SimilarityVector(mask, "binary"), VOCAB)
            assert VOCAB.index(got) == brute_force_filtered_argmax(dist, mask)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            predict_filtered(np.ones(3) / 3, SimilarityVector(np.ones(4), "binary"),
                             VOCAB)


class TestCheckSentence:
    def test_agreeing_argmax_gives_no_edits(self):
        scorer = FakeScorer(VOCAB, {
            ("S1", 0): [0.8, 0.1, 0.1],
            ("S1", 1): [0.1, 0.8, 0.1],
        })
        result = check_sentence(Sentence("S1", "甲乙"), scorer)
        assert result.edits == []
        assert all(not p.flagged for p in result.positions)

    def test_binary_filter_suppresses_false_flag(self):
        scorer = FakeScorer(VOCAB, {("S1", 0): [0.3, 0.5, 0.2]})
        sentence = Sentence("S1", "甲")
        unfiltered = check_sentence(sentence, scorer)
        assert unfiltered.edits == [(1, "甲", "乙")]
        filt = ConfusionSetFilter(ConfusionSets({}), VOCAB)  # identity-only vectors
        filtered = check_sentence(sentence, scorer, filt)
        assert filtered.edits == []

    def test_filter_corrects_within_confusion_set(self):
        scorer = FakeScorer(VOCAB, {("S1", 0): [0.1, 0.6, 0.3]})
        filt = ConfusionSetFilter(ConfusionSets({"甲": {"丙"}}), VOCAB)
        result = check_sentence(Sentence("S1", "甲"), scorer, filt)
        assert result.edits == [(1, "甲", "丙")]

    def test_oov_input_passes_through_unflagged(self):
        scorer = FakeScorer(VOCAB, {("S1", 1): [0.0, 1.0, 0.0]})
        result = check_sentence(Sentence("S1", "猫乙"), scorer)
        assert result.positions[0].flagged is False
        assert result.positions[0].predicted == "猫"
        assert result.edits == []

    def test_delta_at_input_never_flagged_with_positive_self_entry(self):
        scorer = FakeScorer(VOCAB, {("S1", 0): [0.0, 1.0, 0.0]})
        filt = ConfusionSetFilter(ConfusionSets({"乙": {"甲", "丙"}}), VOCAB)
        result = check_sentence(Sentence("S1", "乙"), scorer, filt)
        assert result.edits == []

    def test_min_ratio_threshold_suppresses_weak_flags(self):
        scorer = FakeScorer(VOCAB, {("S1", 0): [0.45, 0.55, 0.0]})
        sentence = Sentence("S1", "甲")
        assert check_sentence(sentence, scorer).edits == [(1, "甲", "乙")]
        assert check_sentence(sentence, scorer, min_ratio=2.0).edits == []
        assert check_sentence(sentence, scorer, min_ratio=1.1).edits == [(1, "甲", "乙")]

    def test_flagged_iff_prediction_differs(self):
        rng = np.random.default_rng(5)
        table = {("S1", i): rng.dirichlet(np.ones(3)) for i in range(6)}
        scorer = FakeScorer(VOCAB, table)
        result = check_sentence(Sentence("S1", "甲乙丙甲乙丙"), scorer)
        for i, p in enumerate(result.positions):
            assert p.flagged == (p.predicted != p.input)
        assert [(pos, w) for pos, w, _ in result.edits] == \
            [(i + 1, p.input) for i, p in enumerate(result.positions) if p.flagged]

    def test_error_carries_position_context(self):
        class Exploding:
            vocab = VOCAB

            def position_distribution(self, sentence, i):
                raise ValueError("boom")

        with pytest.raises(ValueError, match="position 1"):
            check_sentence(Sentence("S7", "甲"), Exploding())

    def test_thread_count_does_not_change_results(self):
        rng = np.random.default_rng(6)
        table = {}
        sentences = []
        for s in range(8):
            sid = f"S{s}"
            text = "".join(rng.choice(VOCAB.chars, size=5))
            sentences.append(Sentence(sid, text))
            for i in range(5):
                table[(sid, i)] = rng.dirichlet(np.ones(3))
        scorer = FakeScorer(VOCAB, table)
        serial = check_sentences(sentences, scorer, threads=1)
        parallel = check_sentences(sentences, scorer, threads=4)
        assert [r.to_json() for r in serial] == [r.to_json() for r in parallel]

    def test_json_format(self):
        scorer = FakeScorer(VOCAB, {("S1", 0): [0.1, 0.9, 0.0]})
        result = check_sentence(Sentence("S1", "甲"), scorer)
        import json
        obj = json.loads(result.to_json())
        assert obj == {"id": "S1",
                       "edits": [{"pos": 1, "wrong": "甲", "correction": "乙"}]}
