import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ibpcat.core import Hyperparams
from ibpcat.estimators import GibbsLatentFeatures, VariationalLatentFeatures
from ibpcat.synthgen import generate_categorical


def planted(n=60, d=6, k=2, seed=0):
    hyper = Hyperparams(1.0, 1.0, seed=seed)
    rng = np.random.default_rng(seed)
    X, z, weights = generate_categorical(n, d, k, 2, hyper, rng, p_active=0.4)
    return X.data, z


class TestGibbsEstimator:
    def test_get_set_params_and_clone(self):
        est = GibbsLatentFeatures(alpha=0.7, n_iterations=5)
        params = est.get_params()
        assert params["alpha"] == 0.7
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_fit_sets_attributes(self):
        X, _ = planted()
        est = GibbsLatentFeatures(n_iterations=8, seed=3).fit(X)
        assert est.z_.n_rows == 60
        assert est.n_features_latent_ == est.z_.k_active
        assert len(est.weights_.mats) == 6
        assert np.isfinite(est.score())

    def test_not_fitted_raises(self):
        with pytest.raises(NotFittedError):
            GibbsLatentFeatures().transform(np.ones((2, 3), dtype=int))

    def test_fit_transform_matches_state(self):
        X, _ = planted(seed=1)
        est = GibbsLatentFeatures(n_iterations=6, seed=1)
        z = est.fit_transform(X)
        assert np.array_equal(z, est.z_.z)

    def test_transform_new_rows_frozen_columns(self):
        X, _ = planted(n=50, seed=2)
        est = GibbsLatentFeatures(n_iterations=10, seed=2, transform_iterations=5).fit(X)
        feats = est.transform(X[:7])
        assert feats.shape == (7, est.n_features_latent_)
        assert set(np.unique(feats)).issubset({0, 1})
        # fitted state untouched
        assert est.z_.n_rows == 50

    def test_rejects_out_of_range_with_cardinalities(self):
        with pytest.raises(ValueError):
            GibbsLatentFeatures(n_iterations=2, cardinalities=[2, 2]).fit(
                np.array([[1, 3], [1, 2]])
            )


class TestVariationalEstimator:
    def test_fit_and_bound_trace(self):
        X, _ = planted(seed=4)
        est = VariationalLatentFeatures(k=4, max_cycles=30, seed=4).fit(X)
        assert est.state_.k == 4
        assert np.all(np.diff(est.bound_trace_) >= -1e-6)
        assert est.z_.z.shape == (60, 4)

    def test_transform_returns_probabilities(self):
        X, _ = planted(seed=5)
        est = VariationalLatentFeatures(k=3, max_cycles=20, seed=5,
                                        transform_cycles=10).fit(X)
        nu = est.transform(X[:9])
        assert nu.shape == (9, 3)
        assert np.all((nu > 0) & (nu < 1))

    def test_transform_consistent_with_training_rows(self):
        # Features inferred for training rows via transform should broadly
        # agree with the fitted assignments on easy data.
        X, _ = planted(n=80, seed=6)
        est = VariationalLatentFeatures(k=3, max_cycles=40, seed=6,
                                        transform_cycles=40).fit(X)
        nu = est.transform(X)
        hard_fit = est.z_.z
        hard_new = (nu > 0.5).astype(int)
        agree = (hard_fit == hard_new).mean()
        assert agree > 0.8

    def test_not_fitted_raises(self):
        with pytest.raises(NotFittedError):
            VariationalLatentFeatures().transform(np.ones((2, 2), dtype=int))
