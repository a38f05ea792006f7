import math
from collections import Counter

import numpy as np
import pytest

from headfilt.errors import DegenerateCalibration, NonFiniteInput, UnknownCharacter
from headfilt.similarity import (
    BETA_MAX,
    BETA_MIN,
    ConfusionSets,
    FilterConfig,
    calibrate_beta,
    confusion_vector,
    distance,
    headfilt_vector,
    mean_dissimilar_distance,
    similarity,
)
from headfilt.vocab import Vocabulary


def unit_pair_at_distance(chord: float) -> np.ndarray:
    """Two unit vectors whose normalized L2 distance equals ``chord``."""
    cos = 1.0 - chord ** 2 / 2.0
    return np.array([[1.0, 0.0], [cos, math.sqrt(max(0.0, 1.0 - cos ** 2))]])


class TestDistance:
    def test_identical_vectors(self):
        v = np.array([0.3, -1.2, 2.0])
        assert distance(v, v) == 0.0

    def test_orthonormal_pair(self):
        d = distance(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert abs(d - math.sqrt(2)) < 1e-15

    def test_scale_invariance(self):
        assert distance(np.array([2.0, 0.0]), np.array([1.0, 0.0])) == 0.0
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.normal(size=(2, 6))
            s = float(rng.uniform(0.1, 100))
            assert abs(distance(a, b) - distance(s * a, b)) < 1e-12

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b = rng.normal(size=(2, 5))
            d_ab, d_ba = distance(a, b), distance(b, a)
            assert d_ab == d_ba
            assert 0.0 <= d_ab <= 2.0 + 1e-12

    def test_zero_norm_embeddings_do_not_crash(self):
        z = np.zeros(4)
        assert distance(z, z) == 0.0
        assert abs(distance(z, np.array([3.0, 0, 0, 0])) - 1.0) < 1e-15

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteInput):
            distance(np.array([np.nan, 1.0]), np.array([1.0, 0.0]))


class TestSimilarity:
    def test_midpoint_is_half(self):
        cfg = FilterConfig(beta=7.3, m=0.4)
        assert similarity(0.4, cfg) == 0.5

    def test_zero_distance_value(self):
        cfg = FilterConfig(beta=10.0, m=0.4)
        expected = 1.0 / (1.0 + math.exp(-4.0))  # independent scalar evaluation
        assert abs(similarity(0.0, cfg) - expected) < 1e-12
        assert abs(expected - 0.98201) < 1e-5

    def test_saturation_stays_representable(self):
        cfg = FilterConfig(beta=50.0, m=0.4)
        s = similarity(2.0, cfg)
        assert 0.0 < s < 1e-30

    def test_extreme_scale_does_not_overflow(self):
        cfg = FilterConfig(beta=1e4, m=0.4)
        assert similarity(2.0, cfg) >= 0.0
        assert similarity(0.0, cfg) <= 1.0

    def test_strictly_decreasing(self):
        cfg = FilterConfig(beta=6.0, m=0.4)
        rng = np.random.default_rng(2)
        d = np.sort(rng.uniform(0, 2, size=100))
        s = similarity(d, cfg)
        assert np.all(np.diff(s) < 0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FilterConfig(beta=1.0, m=2.5)
        with pytest.raises(ValueError):
            FilterConfig(beta=0.0)


class TestCalibration:
    def test_known_value(self):
        emb = unit_pair_at_distance(0.9)
        pairs = np.array([[0, 1]] * 5)
        assert abs(mean_dissimilar_distance(emb, pairs) - 0.9) < 1e-12
        beta = calibrate_beta(emb, pairs, n_vocab=10, m=0.4)
        assert abs(beta - math.log(9) / 0.5) < 1e-9  # 4.394449...

    def test_degenerate_when_not_separated(self):
        pairs = np.array([[0, 1]])
        with pytest.raises(DegenerateCalibration):
            calibrate_beta(unit_pair_at_distance(0.39), pairs, n_vocab=10, m=0.4)
        identical = np.array([[1.0, 0.0], [1.0, 0.0]])  # d_* == 0 <= m
        with pytest.raises(DegenerateCalibration):
            calibrate_beta(identical, pairs, n_vocab=10, m=0.4)

    def test_no_pairs_is_degenerate(self):
        with pytest.raises(DegenerateCalibration):
            calibrate_beta(np.eye(3), np.empty((0, 2), dtype=int), n_vocab=3, m=0.4)

    def test_two_character_vocabulary_hits_floor(self):
        emb = unit_pair_at_distance(1.0)
        pairs = np.array([[0, 1]])
        assert calibrate_beta(emb, pairs, n_vocab=2, m=0.4) == BETA_MIN

    def test_ceiling(self):
        emb = unit_pair_at_distance(0.4 + 1e-9)
        pairs = np.array([[0, 1]])
        assert calibrate_beta(emb, pairs, n_vocab=1000, m=0.4) == BETA_MAX

    def test_calibrated_scale_puts_mean_distance_at_chance(self):
        rng = np.random.default_rng(3)
        emb = rng.normal(size=(40, 8))
        pairs = np.stack([rng.integers(0, 40, 300), rng.integers(0, 40, 300)], axis=1)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        n = 40
        beta = calibrate_beta(emb, pairs, n, m=0.4)
        d_star = mean_dissimilar_distance(emb, pairs)
        cfg = FilterConfig(beta=beta, m=0.4)
        assert similarity(d_star, cfg) <= 1.0 / n + 1e-9


class TestConfusionSets:
    def test_load_and_merge(self, tmp_path):
        path = tmp_path / "sets.txt"
        path.write_text("# comment\n無:吾嫵\n無:舞無\n免:兔\n", encoding="utf-8")
        sets = ConfusionSets.load(path)
        assert sets.members("無") == frozenset("吾嫵舞")  # merged, head dropped
        assert sets.members("免") == frozenset("兔")
        assert sets.covers("兔", "免")
        assert not sets.covers("免", "吾")

    def test_head_excluded_in_storage(self):
        sets = ConfusionSets({"甲": {"甲", "乙"}})
        assert sets.members("甲") == frozenset("乙")


class TestVectors:
    VOCAB = Vocabulary(["無", "吾", "嫵", "舞", "年"])

    def test_confusion_vector_marks_set_and_self(self):
        sets = ConfusionSets({"無": set("吾嫵舞")})
        vec = confusion_vector("無", sets, self.VOCAB)
        np.testing.assert_array_equal(vec.values, [1, 1, 1, 1, 0])
        assert vec.kind == "binary"

    def test_empty_set_is_identity_only(self):
        sets = ConfusionSets({})
        vec = confusion_vector("年", sets, self.VOCAB)
        np.testing.assert_array_equal(vec.values, [0, 0, 0, 0, 1])

    def test_out_of_vocab_member_reported(self):
        sets = ConfusionSets({"無": {"吾", "橆"}})
        report = Counter()
        vec = confusion_vector("無", sets, self.VOCAB, report)
        np.testing.assert_array_equal(vec.values, [1, 1, 0, 0, 0])
        assert report["橆"] == 1

    def test_unknown_character(self):
        with pytest.raises(UnknownCharacter):
            confusion_vector("袋", ConfusionSets({}), self.VOCAB)

    def test_headfilt_vector_matches_elementwise_recomputation(self):
        vocab = Vocabulary(["甲", "乙", "丙"])
        emb = np.array([[1.0, 0.0], [0.6, 0.8], [-1.0, 0.5]])
        cfg = FilterConfig(beta=5.0, m=0.4)
        vec = headfilt_vector("乙", vocab, emb, cfg)
        assert vec.kind == "real"
        for k in range(3):
            u = emb[1] / np.linalg.norm(emb[1])
            v = emb[k] / np.linalg.norm(emb[k])
            d = math.sqrt(float(np.sum((u - v) ** 2)))
            expected = 1.0 / (1.0 + math.exp(5.0 * (d - 0.4)))
            assert abs(vec.values[k] - expected) < 1e-12

    def test_self_entry_above_half_and_dominant(self):
        rng = np.random.default_rng(4)
        vocab = Vocabulary([chr(0x4E00 + i) for i in range(12)])
        emb = rng.normal(size=(12, 6))
        cfg = FilterConfig(beta=8.0, m=0.4)
        for ch in vocab:
            vec = headfilt_vector(ch, vocab, emb, cfg)
            own = vec.values[vocab.index(ch)]
            assert own > 0.5
            assert np.all(own >= vec.values)

    def test_identical_embeddings_share_self_similarity(self):
        vocab = Vocabulary(["甲", "乙", "丙"])
        emb = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 1.0]])
        cfg = FilterConfig(beta=9.0, m=0.4)
        vec = headfilt_vector("甲", vocab, emb, cfg)
        assert vec.values[0] == vec.values[1] == similarity(0.0, cfg)

    def test_scale_invariance_downstream(self):
        rng = np.random.default_rng(5)
        vocab = Vocabulary([chr(0x4E00 + i) for i in range(6)])
        emb = rng.normal(size=(6, 4))
        scaled = emb * rng.uniform(0.2, 30.0, size=(6, 1))
        cfg = FilterConfig(beta=6.0, m=0.4)
        dist = rng.dirichlet(np.ones(6))
        for ch in vocab:
            v1 = headfilt_vector(ch, vocab, emb, cfg).values
            v2 = headfilt_vector(ch, vocab, scaled, cfg).values
            np.testing.assert_allclose(v1, v2, atol=1e-12)
            assert np.argmax(dist * v1) == np.argmax(dist * v2)
