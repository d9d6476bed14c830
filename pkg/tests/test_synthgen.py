import numpy as np
import pytest

from ibpcat.core import Hyperparams, LatentFeatureState, category_probabilities, extend
from ibpcat.synthgen import (
    DEFAULT_BASE_IMAGES,
    ImageGenConfig,
    generate_categorical,
    generate_images,
)


class TestImageGenerator:
    def test_default_bases_disjoint_and_shaped(self):
        stack = np.array([b.ravel() for b in DEFAULT_BASE_IMAGES])
        assert stack.shape == (4, 36)
        assert np.all(stack.sum(axis=0) <= 1)  # no overlap
        assert np.all(stack.sum(axis=1) >= 4)

    def test_noiseless_single_base(self):
        cfg = ImageGenConfig(n_samples=50, presence_prob=1.0, noise_flip_prob=0.0,
                             base_images=DEFAULT_BASE_IMAGES[:1], seed=0)
        X, true_z = generate_images(cfg)
        assert np.all(true_z == 1)
        base = DEFAULT_BASE_IMAGES[0].ravel()
        for row in X.data:
            assert np.array_equal(row == 2, base)

    def test_zero_presence_all_black(self):
        cfg = ImageGenConfig(n_samples=30, presence_prob=0.0, seed=1)
        X, true_z = generate_images(cfg)
        assert np.all(X.data == 1)
        assert np.all(true_z == 0)

    def test_noise_never_creates_white(self):
        cfg = ImageGenConfig(n_samples=500, seed=2)
        X, true_z = generate_images(cfg)
        composite = (true_z @ np.array([b.ravel() for b in DEFAULT_BASE_IMAGES])) > 0
        assert not np.any((X.data == 2) & ~composite)

    def test_monte_carlo_statistics(self):
        cfg = ImageGenConfig(n_samples=10_000, seed=3)
        X, true_z = generate_images(cfg)
        n = cfg.n_samples
        se_act = np.sqrt(0.3 * 0.7 / n)
        assert np.all(np.abs(true_z.mean(axis=0) - 0.3) < 3 * se_act)
        composite = (true_z @ np.array([b.ravel() for b in DEFAULT_BASE_IMAGES])) > 0
        white = X.data == 2
        survival = white[composite].mean()
        n_white = composite.sum()
        assert abs(survival - 0.5) < 3 * np.sqrt(0.25 / n_white)

    def test_deterministic_given_seed(self):
        cfg = ImageGenConfig(n_samples=20, seed=11)
        a, za = generate_images(cfg)
        b, zb = generate_images(cfg)
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(za, zb)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ImageGenConfig(n_samples=0)
        with pytest.raises(ValueError):
            ImageGenConfig(n_samples=5, presence_prob=1.5)
        with pytest.raises(ValueError):
            ImageGenConfig(n_samples=5, base_images=())
        with pytest.raises(ValueError):
            ImageGenConfig(
                n_samples=5,
                base_images=(np.ones((2, 2), dtype=bool), np.ones((3, 3), dtype=bool)),
            )


class TestCategoricalGenerator:
    def test_uniform_when_no_structure(self):
        rng = np.random.default_rng(0)
        hyper = Hyperparams(1.0, 1e-12, seed=0)  # near-zero weights
        X, z, weights = generate_categorical(20_000, 2, 0, 3, hyper, rng)
        freqs = np.array([(X.data[:, 0] == c).mean() for c in (1, 2, 3)])
        se = np.sqrt(freqs * (1 - freqs) / 20_000)
        assert np.all(np.abs(freqs - 1.0 / 3) < 3 * np.maximum(se, 1e-4))

    def test_deterministic_given_seed(self):
        hyper = Hyperparams(1.0, 1.0, seed=0)
        a = generate_categorical(15, 3, 2, 2, hyper, np.random.default_rng(42))
        b = generate_categorical(15, 3, 2, 2, hyper, np.random.default_rng(42))
        assert np.array_equal(a[0].data, b[0].data)
        assert np.array_equal(a[1], b[1])

    def test_conditional_frequencies_match_softmax(self):
        rng = np.random.default_rng(7)
        hyper = Hyperparams(1.0, 1.0, seed=0)
        X, z, weights = generate_categorical(100_000, 1, 1, 3, hyper, rng, p_active=0.5)
        for bit in (0, 1):
            rows = z[:, 0] == bit
            expected = category_probabilities(np.array([1.0, float(bit)]), weights.mats[0])
            count = rows.sum()
            for c in range(3):
                freq = (X.data[rows, 0] == c + 1).mean()
                se = np.sqrt(max(expected[c] * (1 - expected[c]), 1e-8) / count)
                assert abs(freq - expected[c]) < 3.5 * se

    def test_mixed_cardinalities(self):
        rng = np.random.default_rng(9)
        hyper = Hyperparams(1.0, 1.0, seed=0)
        X, z, weights = generate_categorical(10, 3, 2, [2, 3, 4], hyper, rng)
        assert list(X.cardinalities) == [2, 3, 4]
        assert weights.mats[2].shape == (3, 4)
