"""Domain types, the multinomial-logit observation model, and prior sampling.

Conventions used throughout the package:

* Categories are 1-based at the API boundary (r = 1..R_d) and 0-based
  internally; :class:`ObservationMatrix` owns the conversion.
* The always-active bias feature is implicit.  A feature state stores only
  the N x K_plus binary matrix; numerical routines prepend the bias column
  on the fly via :func:`extend`.
* Weight matrices are (K_plus + 1) x R_d with row 0 holding the bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

STICK_TAIL_THRESHOLD = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    """Model hyperparameters: IBP concentration, weight prior variance, seed."""

    alpha: float
    sigma_b_sq: float
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.sigma_b_sq > 0:
            raise ValueError(f"sigma_b_sq must be positive, got {self.sigma_b_sq}")


class ObservationMatrix:
    """N x D categorical observations with per-dimension cardinalities.

    Parameters
    ----------
    data : array-like of int, shape (N, D)
        1-based categories, entry (n, d) in {1, .., cardinalities[d]}.
    cardinalities : array-like of int, shape (D,)
        Number of categories per dimension, each >= 2.
    """

    def __init__(self, data, cardinalities):
        data = np.asarray(data, dtype=np.int64)
        if data.ndim != 2:
            raise ShapeError(f"data must be 2-D, got shape {data.shape}")
        card = np.asarray(cardinalities, dtype=np.int64)
        if card.shape != (data.shape[1],):
            raise ShapeError(
                f"cardinalities shape {card.shape} does not match D={data.shape[1]}"
            )
        if np.any(card < 2):
            raise ValueError("every cardinality must be >= 2")
        if data.size and (data.min() < 1 or np.any(data > card[None, :])):
            raise ValueError("every entry must lie in 1..R_d for its dimension")
        self._codes = (data - 1).astype(np.int64)
        self._codes.flags.writeable = False
        card = card.copy()
        card.flags.writeable = False
        self._card = card

    @property
    def n_rows(self) -> int:
        return self._codes.shape[0]

    @property
    def n_cols(self) -> int:
        return self._codes.shape[1]

    @property
    def cardinalities(self) -> np.ndarray:
        return self._card

    @property
    def codes(self) -> np.ndarray:
        """0-based category codes, read-only."""
        return self._codes

    @property
    def data(self) -> np.ndarray:
        """1-based categories (copy)."""
        return self._codes + 1

    def subset_rows(self, rows) -> "ObservationMatrix":
        return ObservationMatrix(self.data[rows], self._card)

    def __repr__(self):
        return f"ObservationMatrix(N={self.n_rows}, D={self.n_cols})"


class LatentFeatureState:
    """Binary feature assignments Z (N x K_plus).  The bias column is implicit."""

    def __init__(self, z):
        z = np.asarray(z)
        if z.ndim != 2:
            raise ShapeError(f"z must be 2-D, got shape {z.shape}")
        if z.size and not np.isin(z, (0, 1)).all():
            raise ValueError("z entries must be 0 or 1")
        self.z = z.astype(np.int8)

    @property
    def n_rows(self) -> int:
        return self.z.shape[0]

    @property
    def k_active(self) -> int:
        return self.z.shape[1]

    @property
    def column_counts(self) -> np.ndarray:
        """m_k = sum_n z_nk, computed on demand."""
        return self.z.sum(axis=0, dtype=np.int64)

    def check_no_empty_columns(self):
        if self.k_active and np.any(self.column_counts == 0):
            raise ValueError("state contains an all-zero column")

    def copy(self) -> "LatentFeatureState":
        return LatentFeatureState(self.z.copy())

    def __repr__(self):
        return f"LatentFeatureState(N={self.n_rows}, K+={self.k_active})"


class WeightStack:
    """Per-dimension weight matrices B^d of shape (K_plus + 1, R_d), row 0 = bias."""

    def __init__(self, mats):
        mats = [np.asarray(m, dtype=float) for m in mats]
        if not mats:
            raise ValueError("WeightStack needs at least one dimension")
        k1 = mats[0].shape[0]
        for d, m in enumerate(mats):
            if m.ndim != 2 or m.shape[0] != k1:
                raise ShapeError(f"weight matrix {d} has shape {m.shape}, expected ({k1}, R_d)")
            if m.shape[1] < 2:
                raise ShapeError(f"weight matrix {d} needs at least 2 categories")
            if not np.isfinite(m).all():
                raise ValueError(f"weight matrix {d} has non-finite entries")
        self.mats = mats

    @property
    def n_dims(self) -> int:
        return len(self.mats)

    @property
    def k_active(self) -> int:
        return self.mats[0].shape[0] - 1

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([m.shape[1] for m in self.mats], dtype=np.int64)

    def drop_features(self, feature_indices) -> "WeightStack":
        """Remove the weight rows of the given features (0-based, bias excluded)."""
        keep = [0] + [k + 1 for k in range(self.k_active) if k not in set(feature_indices)]
        return WeightStack([m[keep] for m in self.mats])

    def copy(self) -> "WeightStack":
        return WeightStack([m.copy() for m in self.mats])


def extend(z) -> np.ndarray:
    """Prepend the implicit all-ones bias column, as a float array."""
    z = np.asarray(z, dtype=float)
    return np.column_stack([np.ones(z.shape[0]), z])


def category_probabilities(z_row, weights_d) -> np.ndarray:
    """Softmax category probabilities for one extended feature row.

    ``z_row`` has length K_plus + 1 with z_row[0] = 1 (the bias);
    ``weights_d`` is the (K_plus + 1) x R_d weight matrix.  Computed with
    max-subtraction so extreme weights cannot overflow.
    """
    z_row = np.asarray(z_row, dtype=float)
    weights_d = np.asarray(weights_d, dtype=float)
    if z_row.ndim != 1 or weights_d.ndim != 2 or z_row.shape[0] != weights_d.shape[0]:
        raise ShapeError(
            f"z_row of length {z_row.shape} does not match weights {weights_d.shape}"
        )
    if z_row[0] != 1:
        raise ValueError("z_row[0] must be 1 (implicit bias)")
    scores = z_row @ weights_d
    scores -= scores.max()
    e = np.exp(scores)
    return e / e.sum()


def softmax_rows(scores) -> np.ndarray:
    """Row-wise softmax with max-subtraction."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(scores) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_likelihood(X: ObservationMatrix, Z: LatentFeatureState, B: WeightStack) -> float:
    """log p(X | Z, B) = sum_n sum_d log pi_nd^{x_nd}."""
    if X.n_rows != Z.n_rows:
        raise ShapeError(f"X has {X.n_rows} rows but Z has {Z.n_rows}")
    if B.n_dims != X.n_cols or B.k_active != Z.k_active:
        raise ShapeError("weight stack does not match X and Z")
    if np.any(B.cardinalities != X.cardinalities):
        raise ShapeError("weight stack cardinalities do not match X")
    zext = extend(Z.z)
    total = 0.0
    rows = np.arange(X.n_rows)
    for d in range(X.n_cols):
        logp = log_softmax_rows(zext @ B.mats[d])
        total += logp[rows, X.codes[:, d]].sum()
    return float(total)


def sample_prior(N: int, hyper: Hyperparams, rng: np.random.Generator) -> LatentFeatureState:
    """Draw Z from the IBP via stick-breaking, truncated adaptively.

    Sticks are extended until the remaining activation mass drops below
    ``STICK_TAIL_THRESHOLD``; empty columns are pruned afterwards.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    cols = []
    omega = 1.0
    while True:
        omega *= rng.beta(hyper.alpha, 1.0)
        if omega < STICK_TAIL_THRESHOLD:
            break
        cols.append(rng.random(N) < omega)
    if cols:
        z = np.array(cols, dtype=np.int8).T
        z = z[:, z.sum(axis=0) > 0]
    else:
        z = np.zeros((N, 0), dtype=np.int8)
    return LatentFeatureState(z)


def left_order(Z: LatentFeatureState) -> LatentFeatureState:
    """Reorder columns by their binary-number value (row 0 most significant), descending."""
    if Z.k_active <= 1:
        return Z.copy()
    order = sorted(range(Z.k_active), key=lambda k: tuple(Z.z[:, k]), reverse=True)
    return LatentFeatureState(Z.z[:, order])
