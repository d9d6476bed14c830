"""sklearn-style estimator wrappers around the two inference engines.

Both estimators consume integer matrices of 1-based categories (shape
n_samples x n_dimensions), expose ``get_params``/``set_params`` through
:class:`sklearn.base.BaseEstimator`, and transform new data into latent
feature representations, so they compose with pipelines and model-selection
utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from .core import Hyperparams, LatentFeatureState, ObservationMatrix
from .gibbs import GibbsConfig, run_chain
from .laplace import fit_weights
from .vi import VISchedule, binarize, default_init, run_vi, update_nu, update_xi


def _as_observations(X, cardinalities):
    X = check_array(X, dtype=np.int64, ensure_2d=True)
    if cardinalities is None:
        cardinalities = np.maximum(X.max(axis=0), 2)
    return ObservationMatrix(X, cardinalities)


class GibbsLatentFeatures(BaseEstimator, TransformerMixin):
    """Collapsed Gibbs sampler over binary latent features.

    ``fit`` runs the chain on the training matrix and keeps the final state
    plus MAP weights.  ``transform`` infers features for new rows under the
    incremental protocol: the fitted rows and the column set are frozen and
    only the new rows' entries are resampled.
    """

    def __init__(self, alpha=1.0, sigma_b_sq=1.0, n_iterations=100, burn_in=0,
                 k_init=2, p_init=0.5, max_new_features_per_step=4, seed=0,
                 cardinalities=None, transform_iterations=10):
        self.alpha = alpha
        self.sigma_b_sq = sigma_b_sq
        self.n_iterations = n_iterations
        self.burn_in = burn_in
        self.k_init = k_init
        self.p_init = p_init
        self.max_new_features_per_step = max_new_features_per_step
        self.seed = seed
        self.cardinalities = cardinalities
        self.transform_iterations = transform_iterations

    def _config(self, n_iterations, **overrides):
        hyper = Hyperparams(alpha=self.alpha, sigma_b_sq=self.sigma_b_sq, seed=self.seed)
        base = dict(
            n_iterations=n_iterations,
            hyper=hyper,
            burn_in=self.burn_in,
            k_init=self.k_init,
            p_init=self.p_init,
            max_new_features_per_step=self.max_new_features_per_step,
        )
        base.update(overrides)
        return GibbsConfig(**base)

    def fit(self, X, y=None):
        obs = _as_observations(X, self.cardinalities)
        trace = run_chain(obs, self._config(self.n_iterations))
        self.observations_ = obs
        self.trace_ = trace
        self.z_ = trace.final_state
        self.n_features_latent_ = self.z_.k_active
        self.weights_, self.log_marginals_ = fit_weights(obs, self.z_, self._hyper())
        return self

    def _hyper(self):
        return Hyperparams(alpha=self.alpha, sigma_b_sq=self.sigma_b_sq, seed=self.seed)

    def _check_fitted(self):
        if not hasattr(self, "z_"):
            raise NotFittedError("call fit before using this estimator")

    def fit_transform(self, X, y=None):
        return self.fit(X).z_.z.copy()

    def transform(self, X):
        """Feature rows for new observations, holding the fitted block fixed."""
        self._check_fitted()
        obs_new = _as_observations(X, self.observations_.cardinalities)
        n_old = self.observations_.n_rows
        combined = ObservationMatrix(
            np.vstack([self.observations_.data, obs_new.data]),
            self.observations_.cardinalities,
        )
        init_z = np.vstack(
            [self.z_.z, np.zeros((obs_new.n_rows, self.z_.k_active), dtype=np.int8)]
        )
        config = self._config(
            self.transform_iterations,
            burn_in=0,
            freeze_columns=True,
            fixed_rows=tuple(range(n_old)),
        )
        trace = run_chain(combined, config, init_z=init_z)
        return trace.final_state.z[n_old:].copy()

    def score(self, X=None, y=None):
        """Approximate log p(X | Z) of the fitted state."""
        self._check_fitted()
        return float(self.log_marginals_.sum())


class VariationalLatentFeatures(BaseEstimator, TransformerMixin):
    """Truncated variational inference over latent feature probabilities.

    ``transform`` returns per-row feature probabilities (the Bernoulli
    means); threshold them with :func:`ibpcat.vi.binarize` for hard
    assignments.  New rows are folded in by optimizing only their local
    parameters with the global sticks and weights held fixed.
    """

    def __init__(self, k=10, alpha=1.0, sigma_b_sq=1.0, max_cycles=200,
                 rel_tol=1e-8, seed=0, cardinalities=None, transform_cycles=25):
        self.k = k
        self.alpha = alpha
        self.sigma_b_sq = sigma_b_sq
        self.max_cycles = max_cycles
        self.rel_tol = rel_tol
        self.seed = seed
        self.cardinalities = cardinalities
        self.transform_cycles = transform_cycles

    def fit(self, X, y=None):
        obs = _as_observations(X, self.cardinalities)
        hyper = Hyperparams(alpha=self.alpha, sigma_b_sq=self.sigma_b_sq, seed=self.seed)
        state, bounds = run_vi(
            obs, self.k, hyper,
            schedule=VISchedule(max_cycles=self.max_cycles, rel_tol=self.rel_tol),
        )
        self.observations_ = obs
        self.hyper_ = hyper
        self.state_ = state
        self.bound_trace_ = bounds
        self.z_ = LatentFeatureState(binarize(state.nu))
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError("call fit before using this estimator")

    def fit_transform(self, X, y=None):
        return self.fit(X).state_.nu.copy()

    def transform(self, X):
        self._check_fitted()
        obs_new = _as_observations(X, self.observations_.cardinalities)
        local = default_init(obs_new, self.k, self.hyper_)
        local.tau = self.state_.tau.copy()
        local.lam = self.state_.lam.copy()
        local.phi = [p.copy() for p in self.state_.phi]
        local.sigma_sq = [s.copy() for s in self.state_.sigma_sq]
        for _ in range(self.transform_cycles):
            local.xi = update_xi(local)
            local.nu = update_nu(local, obs_new, self.hyper_)
        return local.nu.copy()
