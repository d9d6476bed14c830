"""Per-dimension Laplace approximation of the weight posterior.

For one observation column x (categories 1..R) and a feature state Z, the
un-normalized log posterior of the extended weight matrix B is

    f(B) = trace(M^T B) - sum_n log sum_r exp(z_n b_r)
           - trace(B^T B) / (2 sigma_B^2) - R (K+1)/2 log(2 pi sigma_B^2),

where M counts co-occurrences of categories and active features.  f is
strictly concave, so Newton's method finds the unique maximum B_MAP, and the
Gaussian integral around it yields the approximate log marginal likelihood
log p(x | Z).

The negated Hessian decomposes as a block-diagonal matrix minus N rank-one
terms, so its inverse and log-determinant can be carried recursively with
the Woodbury identity and the matrix determinant lemma instead of dense
factorizations; observations sharing a (feature row, category) pair are
grouped and applied with a count weight.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    Hyperparams,
    LatentFeatureState,
    ObservationMatrix,
    WeightStack,
    extend,
    log_softmax_rows,
    softmax_rows,
)
from .errors import DegenerateUpdateError, NewtonConvergenceError, ShapeError

NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 100
WOODBURY_EPS = 1e-12


@dataclass(frozen=True)
class SufficientCounts:
    """m[k, r] = number of rows with category r and feature k active (row 0 = bias)."""

    m: np.ndarray

    @property
    def n_rows(self) -> int:
        return int(self.m[0].sum())


@dataclass(frozen=True)
class LaplaceResult:
    b_map: np.ndarray
    log_marginal: float
    newton_iters: int
    grad_norm_final: float


def _as_codes(x_col, cardinality=None):
    x = np.asarray(x_col, dtype=np.int64)
    if x.ndim != 1:
        raise ShapeError("x_col must be 1-D")
    r = int(cardinality) if cardinality is not None else int(x.max(initial=1))
    if x.size and (x.min() < 1 or x.max() > r):
        raise ValueError(f"categories must lie in 1..{r}")
    return x - 1, r


def sufficient_counts(x_col, Z: LatentFeatureState, cardinality=None) -> SufficientCounts:
    """Build the (K+1) x R count matrix for one observation column."""
    codes, r = _as_codes(x_col, cardinality)
    if codes.shape[0] != Z.n_rows:
        raise ShapeError("x_col length does not match Z")
    zext = extend(Z.z)
    onehot = np.zeros((codes.shape[0], r))
    if codes.size:
        onehot[np.arange(codes.shape[0]), codes] = 1.0
    return SufficientCounts(m=zext.T @ onehot)


def objective_f(B, counts: SufficientCounts, Z: LatentFeatureState, hyper: Hyperparams) -> float:
    """Un-normalized log posterior f(B) of the weight matrix."""
    B = np.asarray(B, dtype=float)
    if not np.isfinite(B).all():
        raise ValueError("B has non-finite entries")
    if B.shape != counts.m.shape or B.shape[0] != Z.k_active + 1:
        raise ShapeError(f"B shape {B.shape} does not match counts/Z")
    k1, r = B.shape
    scores = extend(Z.z) @ B
    smax = scores.max(axis=1, keepdims=True)
    lse = np.log(np.exp(scores - smax).sum(axis=1)) + smax[:, 0]
    s2 = hyper.sigma_b_sq
    return float(
        (counts.m * B).sum()
        - lse.sum()
        - (B * B).sum() / (2.0 * s2)
        - r * k1 / 2.0 * np.log(2.0 * np.pi * s2)
    )


def gradient_f(B, counts: SufficientCounts, Z: LatentFeatureState, hyper: Hyperparams) -> np.ndarray:
    """Gradient M - rho - B / sigma_B^2, where rho[k, r] = sum_n z_nk pi_n^r."""
    B = np.asarray(B, dtype=float)
    if B.shape != counts.m.shape or B.shape[0] != Z.k_active + 1:
        raise ShapeError(f"B shape {B.shape} does not match counts/Z")
    zext = extend(Z.z)
    pi = softmax_rows(zext @ B)
    rho = zext.T @ pi
    return counts.m - rho - B / hyper.sigma_b_sq


def hessian_neg(B, Z: LatentFeatureState, hyper: Hyperparams) -> np.ndarray:
    """Dense negated Hessian of f at B, in column-stacked ordering beta = B(:).

    Equals I / sigma_B^2 + sum_n (diag(pi_n) - pi_n^T pi_n) kron (z_n^T z_n)
    and is symmetric positive definite.
    """
    B = np.asarray(B, dtype=float)
    k1, r = B.shape
    zext = extend(Z.z)
    pi = softmax_rows(zext @ B)
    h = np.eye(r * k1) / hyper.sigma_b_sq
    for n in range(zext.shape[0]):
        h += np.kron(np.diag(pi[n]) - np.outer(pi[n], pi[n]), np.outer(zext[n], zext[n]))
    return h


def group_rows(Z: LatentFeatureState, x_col):
    """Collapse rows sharing the same (feature row, category) pair.

    Returns (grouped Z, grouped x_col, counts); feeding the grouped rows with
    their counts into the Woodbury recursions reproduces the ungrouped result.
    """
    x = np.asarray(x_col, dtype=np.int64)
    groups: dict[bytes, int] = {}
    rows, xs, weights = [], [], []
    for n in range(Z.n_rows):
        key = Z.z[n].tobytes() + bytes([0]) + int(x[n]).to_bytes(8, "little")
        idx = groups.get(key)
        if idx is None:
            groups[key] = len(rows)
            rows.append(Z.z[n])
            xs.append(x[n])
            weights.append(1)
        else:
            weights[idx] += 1
    if rows:
        zg = np.array(rows, dtype=np.int8)
    else:
        zg = np.zeros((0, Z.k_active), dtype=np.int8)
    return LatentFeatureState(zg), np.array(xs, dtype=np.int64), np.array(weights, dtype=float)


def _prior_blocks(pi_all, zext, sigma_b_sq):
    """Block-diagonal D with D_r = I / sigma_B^2 + Z^T diag(pi_.r) Z (extended Z)."""
    k1 = zext.shape[1]
    r = pi_all.shape[1]
    blocks = np.empty((r, k1, k1))
    eye = np.eye(k1) / sigma_b_sq
    for j in range(r):
        blocks[j] = eye + (zext * pi_all[:, j : j + 1]).T @ zext
    return blocks


def _woodbury_recursion(pi_all, Z, hyper, weights, want_inverse, want_logdet):
    pi_all = np.asarray(pi_all, dtype=float)
    if pi_all.ndim != 2:
        raise ShapeError("pi_all must be (N, R)")
    if pi_all.shape[0] != Z.n_rows:
        raise ShapeError("pi_all rows do not match Z")
    if pi_all.size and not np.allclose(pi_all.sum(axis=1), 1.0, atol=1e-8):
        raise ValueError("pi_all rows must sum to 1")
    if weights is None:
        weights = np.ones(Z.n_rows)
    weights = np.asarray(weights, dtype=float)
    zext = extend(Z.z)
    k1 = zext.shape[1]
    r = pi_all.shape[1]

    blocks = _prior_blocks(pi_all * weights[:, None] if weights.size else pi_all, zext, hyper.sigma_b_sq)
    inv = np.zeros((r * k1, r * k1))
    logdet = 0.0
    for j in range(r):
        sign, ld = np.linalg.slogdet(blocks[j])
        if sign <= 0:
            raise DegenerateUpdateError("prior block has non-positive determinant")
        logdet += ld
        inv[j * k1 : (j + 1) * k1, j * k1 : (j + 1) * k1] = np.linalg.inv(blocks[j])

    # The running inverse is carried in both modes: each determinant factor
    # is the next downdate denominator.
    for n in range(zext.shape[0]):
        v = np.kron(pi_all[n], zext[n])
        u = inv @ v
        denom = 1.0 - weights[n] * float(v @ u)
        if denom <= WOODBURY_EPS:
            raise DegenerateUpdateError(
                f"rank-one downdate denominator {denom:.3e} at row {n}"
            )
        inv = inv + (weights[n] / denom) * np.outer(u, u)
        logdet += np.log(denom)
    return inv if want_inverse else None, logdet if want_logdet else None


def fast_inverse(pi_all, Z: LatentFeatureState, hyper: Hyperparams, weights=None) -> np.ndarray:
    """Inverse of the negated Hessian via block inverses plus Woodbury downdates.

    ``pi_all`` holds the current softmax probabilities per row; ``weights``
    optionally carries group counts when rows have been collapsed with
    :func:`group_rows`.  Raises :class:`DegenerateUpdateError` when a downdate
    denominator falls below 1e-12; callers fall back to dense inversion.
    """
    inv, _ = _woodbury_recursion(pi_all, Z, hyper, weights, True, False)
    return inv


def log_det_neg_hessian(pi_all, Z: LatentFeatureState, hyper: Hyperparams, weights=None) -> float:
    """log |-grad grad f| via the matrix determinant lemma recursion."""
    _, logdet = _woodbury_recursion(pi_all, Z, hyper, weights, False, True)
    return logdet


def _neg_hessian_inverse(pi_all, Z, hyper, B):
    try:
        return fast_inverse(pi_all, Z, hyper)
    except DegenerateUpdateError:
        return np.linalg.inv(hessian_neg(B, Z, hyper))


def _neg_hessian_logdet(pi_all, Z, hyper, B):
    try:
        return log_det_neg_hessian(pi_all, Z, hyper)
    except DegenerateUpdateError:
        return float(np.linalg.slogdet(hessian_neg(B, Z, hyper))[1])


def newton_map(x_col, Z: LatentFeatureState, hyper: Hyperparams, cardinality=None,
               b_init=None) -> LaplaceResult:
    """MAP weight matrix and approximate log marginal for one observation column.

    Starts at B = 0 (the prior mean) unless ``b_init`` is given; strict
    concavity makes the optimum independent of the start.  Steps are damped
    by halving whenever the objective would decrease.  Raises
    :class:`NewtonConvergenceError` (carrying the last iterate) if the
    gradient max-norm has not dropped below 1e-8 within 100 iterations.
    """
    codes, r = _as_codes(x_col, cardinality)
    if codes.shape[0] != Z.n_rows:
        raise ShapeError("x_col length does not match Z")
    k1 = Z.k_active + 1
    counts = sufficient_counts(codes + 1, Z, r)
    B = np.zeros((k1, r)) if b_init is None else np.array(b_init, dtype=float)
    if B.shape != (k1, r):
        raise ShapeError(f"b_init shape {B.shape}, expected ({k1}, {r})")
    zext = extend(Z.z)
    fcur = objective_f(B, counts, Z, hyper)
    gnorm = np.inf
    iters = 0
    converged = False
    for iters in range(1, NEWTON_MAX_ITER + 1):
        pi = softmax_rows(zext @ B)
        grad = counts.m - zext.T @ pi - B / hyper.sigma_b_sq
        gnorm = float(np.abs(grad).max()) if grad.size else 0.0
        if gnorm < NEWTON_TOL:
            converged = True
            iters -= 1
            break
        hinv = _neg_hessian_inverse(pi, Z, hyper, B)
        delta = (hinv @ grad.ravel(order="F")).reshape((k1, r), order="F")
        step = 1.0
        while True:
            bnew = B + step * delta
            fnew = objective_f(bnew, counts, Z, hyper)
            if fnew >= fcur - 1e-12 or step < 2.0 ** -50:
                break
            step *= 0.5
        B, fcur = bnew, fnew
    if not converged:
        pi = softmax_rows(zext @ B)
        grad = counts.m - zext.T @ pi - B / hyper.sigma_b_sq
        gnorm = float(np.abs(grad).max())
        if gnorm >= NEWTON_TOL:
            raise NewtonConvergenceError(
                f"Newton did not converge in {NEWTON_MAX_ITER} iterations "
                f"(gradient max-norm {gnorm:.3e})",
                result=LaplaceResult(B, np.nan, NEWTON_MAX_ITER, gnorm),
            )

    pi = softmax_rows(zext @ B)
    loglik = float(log_softmax_rows(zext @ B)[np.arange(codes.shape[0]), codes].sum()) if codes.size else 0.0
    logdet = _neg_hessian_logdet(pi, Z, hyper, B)
    # log|I + sigma_B^2 Sum| = log|-grad grad f| + R (K+1) log sigma_B^2
    logdet_eq = logdet + r * k1 * np.log(hyper.sigma_b_sq)
    marginal = (
        -(B * B).sum() / (2.0 * hyper.sigma_b_sq)
        - 0.5 * logdet_eq
        + loglik
    )
    return LaplaceResult(b_map=B, log_marginal=float(marginal), newton_iters=iters,
                         grad_norm_final=gnorm)


def log_marginal(x_col, Z: LatentFeatureState, hyper: Hyperparams, cardinality=None) -> float:
    """Approximate log p(x_col | Z) with the weights integrated out."""
    return newton_map(x_col, Z, hyper, cardinality).log_marginal


def fit_weights(X: ObservationMatrix, Z: LatentFeatureState, hyper: Hyperparams,
                n_threads: int | None = None):
    """MAP weights and per-dimension log marginals for every column of X.

    Dimensions are independent given Z; ``n_threads`` > 1 fans the per-column
    solves out over a thread pool.
    """
    if X.n_rows != Z.n_rows:
        raise ShapeError("X and Z row counts differ")
    cards = X.cardinalities

    def solve(d):
        return newton_map(X.codes[:, d] + 1, Z, hyper, cards[d])

    if n_threads and n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(solve, range(X.n_cols)))
    else:
        results = [solve(d) for d in range(X.n_cols)]
    stack = WeightStack([res.b_map for res in results])
    marginals = np.array([res.log_marginal for res in results])
    return stack, marginals
