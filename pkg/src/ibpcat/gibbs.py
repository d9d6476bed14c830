"""Collapsed Gibbs sampling over the latent feature matrix.

Weights are integrated out through the Laplace marginal everywhere, so the
sampler only ever touches Z.  One sweep visits each row: every existing
column is resampled from

    p(z_nk = 1 | rest) proportional to (m_-nk / N) * p(X | Z with z_nk = 1),

an entry whose column is otherwise empty is dropped without likelihood
evaluation (the birth step owns singletons), and the number of new columns
active only at the current row is drawn from the truncated, normalized
Poisson(alpha / N) times marginal-likelihood weights.

The chain caches the per-dimension marginals and MAP weights of the current
state; a candidate differs from it by a single row pattern, so it is scored
with one warm-started batched Newton solve (:mod:`ibpcat._batched`).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._batched import MarginalEvaluator, group_rows_by_pattern
from .core import Hyperparams, LatentFeatureState, ObservationMatrix, WeightStack
from .errors import ShapeError
from .special import log_gamma


@dataclass(frozen=True)
class GibbsConfig:
    """Chain settings.

    ``k_max`` caps the total number of columns (births stop at the cap),
    ``fixed_rows`` are never resampled, and ``freeze_columns`` disables
    births and pruning; together these expose the incremental protocol of
    fitting on a subsample and then sampling only new rows' features.
    ``memoize_states`` caches marginals by state, worthwhile only when the
    chain revisits a small state space.
    """

    n_iterations: int
    hyper: Hyperparams
    burn_in: int = 0
    k_init: int = 2
    p_init: float = 0.5
    max_new_features_per_step: int = 4
    skip_all_baseline_rows: bool = False
    baseline_categories: int | tuple = 1
    k_max: int | None = None
    freeze_columns: bool = False
    fixed_rows: tuple = ()
    memoize_states: bool = False

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("burn_in must lie in [0, n_iterations)")
        if self.k_init < 0 or not 0.0 <= self.p_init <= 1.0:
            raise ValueError("k_init must be >= 0 and p_init in [0, 1]")
        if self.max_new_features_per_step < 0:
            raise ValueError("max_new_features_per_step must be >= 0")
        if self.k_max is not None and self.k_max < 0:
            raise ValueError("k_max must be >= 0")


@dataclass
class ChainTrace:
    """Per-iteration record of a chain run."""

    k_active: np.ndarray
    log_marginal: np.ndarray
    occupancy: list
    final_state: LatentFeatureState

    @property
    def n_iterations(self) -> int:
        return len(self.k_active)


def conditional_prior(m_minus: int, n_rows: int) -> float:
    """IBP conditional p(z_nk = 1 | Z_-nk) = m_-nk / N for an occupied column."""
    if not 0 <= m_minus <= n_rows - 1:
        raise ValueError(f"m_minus must lie in [0, N-1], got {m_minus} with N={n_rows}")
    return m_minus / n_rows


def prune_empty_columns(Z: LatentFeatureState, B: WeightStack | None = None):
    """Drop all-zero columns; companion weight rows are dropped when B is given."""
    counts = Z.column_counts
    dead = [k for k in range(Z.k_active) if counts[k] == 0]
    if not dead:
        return (Z, B) if B is not None else Z
    keep = [k for k in range(Z.k_active) if counts[k] > 0]
    pruned = LatentFeatureState(Z.z[:, keep])
    if B is not None:
        return pruned, B.drop_features(dead)
    return pruned


def _poisson_log_pmf(j, lam):
    return j * np.log(lam) - lam - log_gamma(j + 1.0)


def _row_rng(seed: int, iteration: int, row: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(1, iteration, row))
    return np.random.Generator(np.random.PCG64(seq))


def _init_rng(seed: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(0,))
    return np.random.Generator(np.random.PCG64(seq))


class GibbsChain:
    """Mutable sampler state with cached marginals for the current Z.

    Drives sweeps over an :class:`ObservationMatrix`; use :func:`run_chain`
    for the standard seeded loop, or construct directly to step manually.
    """

    def __init__(self, X: ObservationMatrix, config: GibbsConfig,
                 init_z: np.ndarray | None = None):
        self.X = X
        self.config = config
        self.hyper = config.hyper
        self.n = X.n_rows
        self.evaluator = MarginalEvaluator(X.codes, X.cardinalities, self.hyper.sigma_b_sq)
        self._skip = np.zeros(self.n, dtype=bool)
        if config.skip_all_baseline_rows:
            base = np.asarray(config.baseline_categories)
            base = np.broadcast_to(base, (X.n_cols,))
            self._skip = (X.codes == (base - 1)[None, :]).all(axis=1)
        for row in config.fixed_rows:
            self._skip[row] = True
        if init_z is None:
            rng = _init_rng(self.hyper.seed)
            z = (rng.random((self.n, config.k_init)) < config.p_init).astype(np.int8)
        else:
            z = np.asarray(init_z, dtype=np.int8).copy()
            if z.shape[0] != self.n:
                raise ShapeError("init_z row count does not match X")
        if config.skip_all_baseline_rows:
            z[self._skip & ~np.isin(np.arange(self.n), config.fixed_rows)] = 0
        z = z[:, z.sum(axis=0) > 0]
        self.z = np.ascontiguousarray(z, dtype=np.int8)
        self._memo: dict = {} if config.memoize_states else None
        self._refresh_cache()

    # -- cache plumbing ----------------------------------------------------

    def _evaluate(self, u, gid, z_candidate, warm):
        if self._memo is not None:
            key = (z_candidate.shape[1], z_candidate.tobytes())
            hit = self._memo.get(key)
            if hit is not None:
                return hit
        total, per_dim, b_list = self.evaluator.evaluate(u, gid, b_init=warm)
        result = (total, per_dim, b_list)
        if self._memo is not None:
            self._memo[key] = result
        return result

    def _refresh_cache(self, warm=None):
        u, gid = group_rows_by_pattern(self.z)
        self._u, self._gid = u, gid
        total, per_dim, b_list = self._evaluate(u, gid, self.z, warm)
        self.log_marginal_total = total
        self._per_dim = per_dim
        self._b_list = b_list

    def _adopt(self, z, u, gid, result):
        self.z = np.ascontiguousarray(z, dtype=np.int8)
        self._u, self._gid = u, gid
        self.log_marginal_total, self._per_dim, self._b_list = result

    # -- public views --------------------------------------------------------

    @property
    def state(self) -> LatentFeatureState:
        return LatentFeatureState(self.z.copy())

    @property
    def k_active(self) -> int:
        return self.z.shape[1]

    def map_weights(self) -> WeightStack:
        """MAP weight matrices of the current state, reassembled per dimension."""
        mats = [None] * self.X.n_cols
        for (dims, _, _), b in zip(self.evaluator.buckets, self._b_list):
            for i, d in enumerate(dims):
                mats[d] = b[i].copy()
        return WeightStack(mats)

    # -- sampling steps ------------------------------------------------------

    def _candidate_flip(self, n, k):
        """Score the state with z_nk flipped; one warm-started batched solve."""
        pattern = self.z[n].copy()
        pattern[k] ^= 1
        u_cand = np.vstack([self._u, pattern[None, :]])
        gid_cand = self._gid.copy()
        gid_cand[n] = self._u.shape[0]
        z_cand = self.z.copy()
        z_cand[n, k] ^= 1
        result = self._evaluate(u_cand, gid_cand, z_cand, self._b_list)
        return z_cand, u_cand, gid_cand, result

    def _drop_column(self, k):
        """Remove column k (empty after a zero-prior shortcut) and re-score."""
        self.z = np.ascontiguousarray(np.delete(self.z, k, axis=1))
        warm = [np.ascontiguousarray(np.delete(b, k + 1, axis=1)) for b in self._b_list]
        self._refresh_cache(warm)

    def _update_row_entries(self, n, rng):
        k = 0
        while k < self.z.shape[1]:
            m_minus = int(self.z[:, k].sum()) - int(self.z[n, k])
            if m_minus == 0:
                if self.z[n, k] == 1:
                    self.z[n, k] = 0
                    if self.config.freeze_columns:
                        self._refresh_cache(self._b_list)
                        k += 1
                    else:
                        self._drop_column(k)
                    continue
                k += 1
                continue
            z_cand, u_cand, gid_cand, cand = self._candidate_flip(n, k)
            prior1 = conditional_prior(m_minus, self.n)
            if self.z[n, k] == 1:
                logw_on, logw_off = self.log_marginal_total, cand[0]
            else:
                logw_on, logw_off = cand[0], self.log_marginal_total
            diff = (np.log(prior1) + logw_on) - (np.log1p(-prior1) + logw_off)
            take_one = rng.random() < 1.0 / (1.0 + np.exp(-diff))
            if take_one != bool(self.z[n, k]):
                self._adopt(z_cand, u_cand, gid_cand, cand)
            k += 1

    def _sample_new_features(self, n, rng):
        cfg = self.config
        j_max = cfg.max_new_features_per_step
        if cfg.k_max is not None:
            j_max = min(j_max, cfg.k_max - self.z.shape[1])
        if cfg.freeze_columns or j_max <= 0:
            return
        lam = self.hyper.alpha / self.n
        logw = np.empty(j_max + 1)
        logw[0] = _poisson_log_pmf(0.0, lam) + self.log_marginal_total
        candidates = []
        g = self._u.shape[0]
        for j in range(1, j_max + 1):
            u_cand = np.hstack([self._u, np.zeros((g, j), dtype=np.int8)])
            pattern = np.concatenate([self.z[n], np.ones(j, dtype=np.int8)])
            u_cand = np.vstack([u_cand, pattern[None, :]])
            gid_cand = self._gid.copy()
            gid_cand[n] = g
            z_cand = np.hstack([self.z, np.zeros((self.n, j), dtype=np.int8)])
            z_cand[n, -j:] = 1
            warm = [
                np.ascontiguousarray(
                    np.concatenate([b, np.zeros((b.shape[0], j, b.shape[2]))], axis=1)
                )
                for b in self._b_list
            ]
            result = self._evaluate(u_cand, gid_cand, z_cand, warm)
            candidates.append((z_cand, u_cand, gid_cand, result))
            logw[j] = _poisson_log_pmf(float(j), lam) + result[0]
        probs = np.exp(logw - logw.max())
        probs /= probs.sum()
        draw = int(np.searchsorted(np.cumsum(probs), rng.random()))
        draw = min(draw, j_max)
        if draw > 0:
            self._adopt(*candidates[draw - 1])

    def sweep(self, rng_for_row) -> None:
        """One full sweep; ``rng_for_row`` maps a row index to its Generator."""
        for n in range(self.n):
            if self._skip[n]:
                continue
            rng = rng_for_row(n)
            self._update_row_entries(n, rng)
            self._sample_new_features(n, rng)
            if not self.config.freeze_columns:
                counts = self.z.sum(axis=0)
                if (counts == 0).any():
                    self.z = np.ascontiguousarray(self.z[:, counts > 0])
                    self._refresh_cache()
            u, gid = group_rows_by_pattern(self.z)
            self._u, self._gid = u, gid


def resample_entry(n: int, k: int, X: ObservationMatrix, Z: LatentFeatureState,
                   hyper: Hyperparams, rng: np.random.Generator) -> LatentFeatureState:
    """Resample one entry of Z from its collapsed conditional.

    When nobody else uses column k the entry is set to 0 without evaluating
    the likelihood (the conditional prior is 0); otherwise both settings are
    scored by the summed per-dimension marginals and the entry is drawn from
    the normalized pair.  The returned state is a copy; empty columns are
    left for the caller to prune.
    """
    if not (0 <= n < Z.n_rows and 0 <= k < Z.k_active):
        raise ShapeError(f"entry ({n}, {k}) out of range")
    z = Z.z.copy()
    m_minus = int(z[:, k].sum()) - int(z[n, k])
    if m_minus == 0:
        z[n, k] = 0
        return LatentFeatureState(z)
    evaluator = MarginalEvaluator(X.codes, X.cardinalities, hyper.sigma_b_sq)
    z_on = z.copy()
    z_on[n, k] = 1
    z_off = z.copy()
    z_off[n, k] = 0
    on, _, _ = evaluator.state_marginals(z_on)
    off, _, _ = evaluator.state_marginals(z_off)
    prior1 = conditional_prior(m_minus, Z.n_rows)
    diff = (np.log(prior1) + on) - (np.log1p(-prior1) + off)
    z[n, k] = 1 if rng.random() < 1.0 / (1.0 + np.exp(-diff)) else 0
    return LatentFeatureState(z)


def sample_new_features(n: int, X: ObservationMatrix, Z: LatentFeatureState,
                        hyper: Hyperparams, rng: np.random.Generator,
                        max_new_features: int = 4,
                        k_max: int | None = None) -> LatentFeatureState:
    """Draw the number of new columns active only at row n.

    The count is sampled from the normalized product of a Poisson(alpha / N)
    prior and the summed marginals over the truncated range
    {0..max_new_features}.
    """
    if not 0 <= n < Z.n_rows:
        raise ShapeError(f"row {n} out of range")
    j_max = max_new_features
    if k_max is not None:
        j_max = min(j_max, k_max - Z.k_active)
    if j_max <= 0:
        return Z.copy()
    evaluator = MarginalEvaluator(X.codes, X.cardinalities, hyper.sigma_b_sq)
    lam = hyper.alpha / Z.n_rows
    logw = np.empty(j_max + 1)
    states = [Z.z.copy()]
    logw[0] = _poisson_log_pmf(0.0, lam) + evaluator.state_marginals(Z.z)[0]
    for j in range(1, j_max + 1):
        z_cand = np.hstack([Z.z, np.zeros((Z.n_rows, j), dtype=np.int8)])
        z_cand[n, -j:] = 1
        states.append(z_cand)
        logw[j] = _poisson_log_pmf(float(j), lam) + evaluator.state_marginals(z_cand)[0]
    probs = np.exp(logw - logw.max())
    probs /= probs.sum()
    draw = min(int(np.searchsorted(np.cumsum(probs), rng.random())), j_max)
    return LatentFeatureState(states[draw])


def sweep(X: ObservationMatrix, Z: LatentFeatureState, config: GibbsConfig,
          rng: np.random.Generator) -> LatentFeatureState:
    """One sweep of the collapsed sampler over all rows, returning the new state."""
    chain = GibbsChain(X, config, init_z=Z.z)
    chain.sweep(lambda row: rng)
    return chain.state


def run_chain(X: ObservationMatrix, config: GibbsConfig,
              init_z: np.ndarray | None = None) -> ChainTrace:
    """Run the seeded chain and record K+ and the marginal at every iteration.

    The initial state draws k_init columns of Bernoulli(p_init) entries
    unless ``init_z`` is given.  Randomness comes from one portable PCG64
    stream per (iteration, row), split from the configured seed, so traces
    are reproducible across platforms.
    """
    chain = GibbsChain(X, config, init_z=init_z)
    k_hist = np.zeros(config.n_iterations, dtype=np.int64)
    lm_hist = np.zeros(config.n_iterations)
    occupancy = []
    seed = config.hyper.seed
    for it in range(config.n_iterations):
        chain.sweep(lambda row, _it=it: _row_rng(seed, _it, row))
        k_hist[it] = chain.k_active
        lm_hist[it] = chain.log_marginal_total
        occupancy.append(chain.z.sum(axis=0).astype(np.int64))
    return ChainTrace(k_active=k_hist, log_marginal=lm_hist, occupancy=occupancy,
                      final_state=chain.state)


def save_trace_csv(trace: ChainTrace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "k_active", "log_marginal_sum"])
        for it in range(trace.n_iterations):
            writer.writerow([it, int(trace.k_active[it]), format(trace.log_marginal[it], ".12g")])


def save_z_csv(Z: LatentFeatureState, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in Z.z:
            writer.writerow([int(v) for v in row])


def load_z_csv(path) -> LatentFeatureState:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if rec:
                rows.append([int(v) for v in rec])
    return LatentFeatureState(np.array(rows, dtype=np.int8))
