import json

import numpy as np
import pytest

from ibpcat.analysis import (
    FeaturePattern,
    conditional_cooccurrence,
    cooccurrence_tables,
    emit_reports,
    empirical_baseline,
    feature_prevalence,
    flip_prevalent_features,
    pattern_census,
    pattern_probabilities,
    probability_ratio,
    wildcard_prevalence,
)
from ibpcat.core import Hyperparams, LatentFeatureState, ObservationMatrix, WeightStack, category_probabilities
from ibpcat.errors import ShapeError


class TestPatternProbabilities:
    def test_empty_pattern_zero_weights_uniform(self):
        B = WeightStack([np.zeros((3, 2)), np.zeros((3, 4))])
        probs = pattern_probabilities(B, FeaturePattern())
        assert np.allclose(probs[0], 0.5)
        assert np.allclose(probs[1], 0.25)

    def test_empty_pattern_bias_only(self):
        rng = np.random.default_rng(0)
        mats = [rng.normal(size=(3, 3))]
        B = WeightStack(mats)
        probs = pattern_probabilities(B, FeaturePattern())
        zext = np.array([1.0, 0.0, 0.0])
        assert np.allclose(probs[0], category_probabilities(zext, mats[0]))

    def test_pattern_12_matches_direct_evaluation(self):
        rng = np.random.default_rng(1)
        mats = [rng.normal(size=(4, 4)) for _ in range(2)]
        B = WeightStack(mats)
        probs = pattern_probabilities(B, FeaturePattern([1, 2]))
        zext = np.array([1.0, 1.0, 1.0, 0.0])
        for d in range(2):
            assert np.allclose(probs[d], category_probabilities(zext, mats[d]))

    def test_out_of_range_pattern(self):
        B = WeightStack([np.zeros((2, 2))])
        with pytest.raises(ShapeError):
            pattern_probabilities(B, FeaturePattern([2]))


class TestBaselineAndRatio:
    def test_all_match(self):
        X = ObservationMatrix(np.full((4, 2), 2), [2, 3])
        assert np.allclose(empirical_baseline(X, 2), 1.0)

    def test_partial_match(self):
        X = ObservationMatrix([[1], [2], [1], [1]], [2])
        assert np.allclose(empirical_baseline(X, [2]), 0.25)

    def test_counting_oracle(self):
        rng = np.random.default_rng(2)
        cards = [2, 3, 4]
        X = ObservationMatrix(
            np.column_stack([rng.integers(1, c + 1, 50) for c in cards]), cards
        )
        targets = [2, 3, 1]
        result = empirical_baseline(X, targets)
        brute = [np.mean([X.data[i, d] == targets[d] for i in range(50)]) for d in range(3)]
        assert np.allclose(result, brute)

    def test_target_validation(self):
        X = ObservationMatrix([[1]], [2])
        with pytest.raises(ValueError):
            empirical_baseline(X, 3)

    def test_ratio_basics(self):
        assert np.allclose(probability_ratio([0.3], [0.1]), 3.0)
        assert np.allclose(probability_ratio([0.2], [0.2]), 1.0)
        out = probability_ratio([0.3, 0.2], [0.0, 0.1])
        assert np.isnan(out[0]) and np.isclose(out[1], 2.0)

    def test_ratio_of_baseline_is_one(self):
        rng = np.random.default_rng(3)
        baseline = rng.uniform(0.1, 0.9, 5)
        assert np.allclose(probability_ratio(baseline, baseline), 1.0)


class TestPrevalence:
    def test_identity_matrix(self):
        Z = LatentFeatureState(np.eye(3, dtype=int))
        prevalence, single = feature_prevalence(Z)
        assert np.allclose(prevalence, 1.0 / 3)
        assert np.allclose(single, 1.0 / 3)

    def test_all_zero(self):
        Z = LatentFeatureState(np.zeros((4, 2), dtype=int))
        prevalence, single = feature_prevalence(Z)
        assert np.allclose(prevalence, 0.0)
        assert np.allclose(single, 0.0)

    def test_counting_oracle(self):
        rng = np.random.default_rng(4)
        z = rng.integers(0, 2, (30, 4))
        Z = LatentFeatureState(z)
        prevalence, single = feature_prevalence(Z)
        for k in range(4):
            assert prevalence[k] == np.mean(z[:, k])
            only = np.mean((z[:, k] == 1) & (z.sum(axis=1) == 1))
            assert single[k] == only

    def test_wildcard(self):
        z = np.array([[1, 1, 0], [1, 0, 0], [1, 1, 1], [0, 1, 1]])
        Z = LatentFeatureState(z)
        assert wildcard_prevalence(Z, [1, 2]) == 0.5
        assert wildcard_prevalence(Z, []) == 1.0


class TestCooccurrence:
    def test_duplicated_column(self):
        col = np.array([1, 1, 0, 1])
        Z = LatentFeatureState(np.column_stack([col, col]))
        empirical, product = cooccurrence_tables(Z)
        assert np.isclose(empirical[0, 1], 0.75)
        assert np.isclose(product[0, 1], 0.75**2)

    def test_disjoint_columns(self):
        Z = LatentFeatureState(np.array([[1, 0], [1, 0], [0, 1], [0, 0]]))
        empirical, _ = cooccurrence_tables(Z)
        assert empirical[0, 1] == 0.0

    def test_planted_independence(self):
        rng = np.random.default_rng(5)
        n = 100_000
        z = (rng.random((n, 3)) < 0.3).astype(int)
        empirical, product = cooccurrence_tables(LatentFeatureState(z))
        se = np.sqrt(0.09 * (1 - 0.09) / n)
        for a in range(3):
            for b in range(a + 1, 3):
                assert abs(empirical[a, b] - product[a, b]) < 3 * se

    def test_symmetry_and_diagonal(self):
        rng = np.random.default_rng(6)
        Z = LatentFeatureState(rng.integers(0, 2, (20, 3)))
        empirical, _ = cooccurrence_tables(Z)
        assert np.allclose(empirical, empirical.T)
        prevalence, _ = feature_prevalence(Z)
        assert np.allclose(np.diag(empirical), prevalence)

    def test_single_feature_rejected(self):
        with pytest.raises(ShapeError):
            cooccurrence_tables(LatentFeatureState(np.ones((3, 1), dtype=int)))


class TestConditionalCooccurrence:
    def test_duplicated_pair(self):
        col = np.array([1, 0, 1])
        Z = LatentFeatureState(np.column_stack([col, col]))
        out = conditional_cooccurrence(Z)
        assert np.isclose(out[0, 1], 1.0)
        assert np.isclose(out[0, 0], 1.0)

    def test_disjoint_pair(self):
        Z = LatentFeatureState(np.array([[1, 0], [0, 1]]))
        out = conditional_cooccurrence(Z)
        assert out[0, 1] == 0.0

    def test_counting_oracle_and_undefined(self):
        rng = np.random.default_rng(7)
        z = rng.integers(0, 2, (25, 3))
        z[:, 2] = 0
        out = conditional_cooccurrence(LatentFeatureState(z))
        assert np.all(np.isnan(out[2]))
        for k1 in range(2):
            m = z[:, k1].sum()
            for k2 in range(3):
                expected = np.sum(z[:, k1] * z[:, k2]) / m
                assert np.isclose(out[k1, k2], expected)


class TestPatternCensus:
    def test_single_pattern(self):
        Z = LatentFeatureState(np.tile([1, 0], (5, 1)))
        census = pattern_census(Z, 10)
        assert census == [((1, 0), 5)]

    def test_identity_patterns(self):
        Z = LatentFeatureState(np.eye(2, dtype=int))
        census = pattern_census(Z, 10)
        assert ((1, 0), 1) in census and ((0, 1), 1) in census

    def test_counts_sum_to_n_and_tie_break(self):
        rng = np.random.default_rng(8)
        z = rng.integers(0, 2, (40, 3))
        census = pattern_census(LatentFeatureState(z), 100)
        assert sum(c for _, c in census) == 40
        counts = [c for _, c in census]
        assert counts == sorted(counts, reverse=True)
        for (p1, c1), (p2, c2) in zip(census, census[1:]):
            if c1 == c2:
                v1 = int("".join(map(str, p1)), 2)
                v2 = int("".join(map(str, p2)), 2)
                assert v1 < v2

    def test_hash_count_oracle(self):
        rng = np.random.default_rng(9)
        z = rng.integers(0, 2, (30, 2))
        census = dict(pattern_census(LatentFeatureState(z), 10))
        from collections import Counter

        brute = Counter(tuple(int(v) for v in row) for row in z)
        assert census == dict(brute)


class TestFlipping:
    def test_flips_above_threshold(self):
        z = np.zeros((10, 1), dtype=int)
        z[:9, 0] = 1
        out, flipped = flip_prevalent_features(LatentFeatureState(z))
        assert flipped == [0]
        assert out.column_counts[0] == 1

    def test_exactly_at_threshold_not_flipped(self):
        z = np.zeros((10, 1), dtype=int)
        z[:8, 0] = 1
        out, flipped = flip_prevalent_features(LatentFeatureState(z), threshold=0.8)
        assert flipped == []
        assert np.array_equal(out.z, z)

    def test_idempotent_second_pass(self):
        rng = np.random.default_rng(10)
        z = (rng.random((50, 4)) < rng.uniform(0.1, 0.95, 4)).astype(int)
        once, flipped1 = flip_prevalent_features(LatentFeatureState(z))
        twice, flipped2 = flip_prevalent_features(once)
        assert flipped2 == []
        assert np.array_equal(once.z, twice.z)

    def test_shape_preserved(self):
        rng = np.random.default_rng(11)
        z = rng.integers(0, 2, (12, 3))
        out, _ = flip_prevalent_features(LatentFeatureState(z))
        assert out.z.shape == z.shape


class TestReports:
    def test_emits_full_battery(self, tmp_path):
        rng = np.random.default_rng(12)
        n, d, k = 30, 4, 3
        X = ObservationMatrix(rng.integers(1, 3, (n, d)), [2] * d)
        z = rng.integers(0, 2, (n, k))
        z[:, z.sum(axis=0) == 0] = 1
        Z = LatentFeatureState(z)
        hyper = Hyperparams(1.0, 1.0, seed=0)
        manifest = emit_reports(tmp_path, X, Z, None, hyper)
        expected = {
            "prevalence.csv",
            "cooccurrence_empirical.csv",
            "cooccurrence_product.csv",
            "conditional_cooccurrence.csv",
            "pattern_census.csv",
            "baseline.csv",
            "pattern_probabilities.csv",
            "probability_ratios.csv",
        }
        assert expected.issubset(set(manifest["files"]))
        for name in expected:
            assert (tmp_path / name).exists()
        saved = json.loads((tmp_path / "manifest.json").read_text())
        assert saved["files"] == manifest["files"]
        ratio_lines = (tmp_path / "probability_ratios.csv").read_text().splitlines()
        assert ratio_lines[0] == "pattern,dim1,dim2,dim3,dim4"
        assert len(ratio_lines) == 1 + 1 + k  # header + none + one per feature

    def test_flip_refits_weights(self, tmp_path):
        rng = np.random.default_rng(13)
        n = 20
        X = ObservationMatrix(rng.integers(1, 3, (n, 2)), [2, 2])
        z = np.ones((n, 2), dtype=int)
        z[0, 1] = 0
        hyper = Hyperparams(1.0, 1.0, seed=0)
        manifest = emit_reports(tmp_path, X, LatentFeatureState(z), None, hyper,
                                flip_threshold=0.8)
        assert manifest["flipped_features"] == [1, 2]
        assert manifest["weights_refit"] is True
