import numpy as np
import pytest

from ibpcat._batched import (
    HAVE_NUMBA,
    MarginalBatch,
    MarginalEvaluator,
    count_table,
    group_rows_by_pattern,
)
from ibpcat.core import Hyperparams, LatentFeatureState
from ibpcat.laplace import newton_map


def test_group_rows_by_pattern():
    z = np.array([[0, 1], [1, 0], [0, 1], [0, 0]], dtype=np.int8)
    u, gid = group_rows_by_pattern(z)
    assert u.shape[0] == 3
    rebuilt = u[gid]
    assert np.array_equal(rebuilt, z)


def test_group_rows_zero_width():
    z = np.zeros((4, 0), dtype=np.int8)
    u, gid = group_rows_by_pattern(z)
    assert u.shape == (1, 0)
    assert np.array_equal(gid, np.zeros(4, dtype=np.int64))


def test_count_table():
    gid = np.array([0, 1, 0, 2])
    codes = np.array([[0, 1], [1, 0], [0, 1], [1, 1]])
    c = count_table(gid, codes, 3, 2)
    assert c.shape == (2, 3, 2)
    assert c[0, 0, 0] == 2 and c[0, 1, 1] == 1 and c[1, 0, 1] == 2
    assert c.sum() == 8


@pytest.mark.parametrize("use_numba", [False] + ([True] if HAVE_NUMBA else []))
def test_marginals_match_reference_solver(use_numba):
    rng = np.random.default_rng(0)
    n = 30
    cards = np.array([2, 3, 2, 4])
    codes = np.column_stack([rng.integers(0, c, n) for c in cards])
    z = rng.integers(0, 2, (n, 3)).astype(np.int8)
    hyper = Hyperparams(1.0, 0.9)
    ev = MarginalEvaluator(codes, cards, hyper.sigma_b_sq, use_numba=use_numba)
    total, per_dim, b_list = ev.state_marginals(z)
    state = LatentFeatureState(z)
    for d in range(4):
        res = newton_map(codes[:, d] + 1, state, hyper, cards[d])
        assert abs(per_dim[d] - res.log_marginal) < 1e-8
    assert abs(total - per_dim.sum()) < 1e-12


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")
def test_numba_and_numpy_paths_agree():
    rng = np.random.default_rng(1)
    n = 40
    cards = np.array([2, 2, 3])
    codes = np.column_stack([rng.integers(0, c, n) for c in cards])
    z = rng.integers(0, 2, (n, 4)).astype(np.int8)
    a = MarginalEvaluator(codes, cards, 1.3, use_numba=True).state_marginals(z)
    b = MarginalEvaluator(codes, cards, 1.3, use_numba=False).state_marginals(z)
    assert np.allclose(a[1], b[1], atol=1e-9)
    for x, y in zip(a[2], b[2]):
        assert np.allclose(x, y, atol=1e-7)


def test_warm_start_matches_cold():
    rng = np.random.default_rng(2)
    n = 25
    codes = rng.integers(0, 2, (n, 5))
    z = rng.integers(0, 2, (n, 2)).astype(np.int8)
    ev = MarginalEvaluator(codes, np.full(5, 2), 1.0)
    u, gid = group_rows_by_pattern(z)
    _, cold, b_list = ev.evaluate(u, gid)
    z2 = z.copy()
    z2[0, 0] ^= 1
    u2, gid2 = group_rows_by_pattern(z2)
    _, warm_result, _ = ev.evaluate(u2, gid2, b_init=b_list)
    _, cold_result, _ = ev.evaluate(u2, gid2)
    assert np.allclose(warm_result, cold_result, atol=1e-9)


def test_duplicate_patterns_are_harmless():
    # Appending a duplicate pattern row (with the weight split) must not
    # change the result; the chain relies on this when scoring candidates.
    rng = np.random.default_rng(3)
    n = 20
    codes = rng.integers(0, 3, (n, 3))
    z = rng.integers(0, 2, (n, 2)).astype(np.int8)
    ev = MarginalEvaluator(codes, np.full(3, 3), 1.0)
    u, gid = group_rows_by_pattern(z)
    _, base, _ = ev.evaluate(u, gid)
    u_dup = np.vstack([u, z[0][None, :]])
    gid_dup = gid.copy()
    gid_dup[0] = u.shape[0]
    _, dup, _ = ev.evaluate(u_dup, gid_dup)
    assert np.allclose(base, dup, atol=1e-9)


def test_empty_group_weight_is_ignored():
    rng = np.random.default_rng(4)
    n = 10
    codes = rng.integers(0, 2, (n, 2))
    z = np.ones((n, 1), dtype=np.int8)
    ev = MarginalEvaluator(codes, np.full(2, 2), 1.0)
    u, gid = group_rows_by_pattern(z)
    _, base, _ = ev.evaluate(u, gid)
    u_pad = np.vstack([u, np.array([[0]], dtype=np.int8)])
    _, padded, _ = ev.evaluate(u_pad, gid)
    assert np.allclose(base, padded, atol=1e-10)
