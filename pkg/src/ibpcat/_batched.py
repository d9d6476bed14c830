"""Vectorized per-dimension Laplace marginals over grouped observations.

The Gibbs sampler evaluates sum_d log p(x_.d | Z) for many candidate states.
Rows sharing a feature pattern are grouped (the counts enter every formula
linearly), and the D independent Newton solves are batched through numpy so
one candidate evaluation is a handful of array operations instead of D
Python-level solver calls.  Results match :func:`ibpcat.laplace.newton_map`
to solver tolerance; the dense batched factorizations replace the rank-one
recursions because the problems here are small (R * (K+1) rarely above ~20).
"""

from __future__ import annotations

import numpy as np

from .errors import NewtonConvergenceError

NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 100

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def group_rows_by_pattern(z):
    """Unique feature rows of z with group ids per row.

    Returns (patterns (G, K), row_gid (N,)).
    """
    if z.shape[0] == 0:
        return np.zeros((0, z.shape[1]), dtype=np.int8), np.zeros(0, dtype=np.int64)
    patterns, row_gid = np.unique(z, axis=0, return_inverse=True)
    return patterns.astype(np.int8), row_gid.reshape(-1).astype(np.int64)


def count_table(row_gid, codes, n_groups, cardinality):
    """C[d, g, r] = number of rows in group g with category code r in dim d."""
    n, d = codes.shape
    if n == 0:
        return np.zeros((d, n_groups, cardinality))
    flat = (
        np.arange(d)[None, :] * (n_groups * cardinality)
        + row_gid[:, None] * cardinality
        + codes
    )
    counts = np.bincount(flat.ravel(), minlength=d * n_groups * cardinality)
    return counts.reshape(d, n_groups, cardinality).astype(float)


class MarginalBatch:
    """Batched Newton MAP + Laplace marginal for all dims sharing one cardinality.

    Parameters are the grouped sufficient statistics: binary patterns
    ``u`` (G x K), group weights implied by ``row_gid``, and the per-dim
    count table built from ``codes`` (N x D_bucket, 0-based).
    """

    def __init__(self, u, row_gid, codes, cardinality, sigma_b_sq):
        self.u = np.asarray(u)
        self.g = self.u.shape[0]
        self.k1 = self.u.shape[1] + 1
        self.r = int(cardinality)
        self.s2 = float(sigma_b_sq)
        self.uext = np.column_stack([np.ones(self.g), self.u.astype(float)])
        self.w = np.bincount(row_gid, minlength=self.g).astype(float)
        self.c = count_table(row_gid, codes, self.g, self.r)
        self.m = np.einsum("gk,dgr->dkr", self.uext, self.c)
        zz = self.uext[:, :, None] * self.uext[:, None, :]
        self.wzz = (zz * self.w[:, None, None]).reshape(self.g, self.k1 * self.k1)
        self.n_dims = self.c.shape[0]

    def _objective(self, b):
        scores = np.einsum("gk,dkr->dgr", self.uext, b)
        smax = scores.max(axis=2)
        lse = smax + np.log(np.exp(scores - smax[:, :, None]).sum(axis=2))
        return (
            (self.m * b).sum(axis=(1, 2))
            - lse @ self.w
            - (b * b).sum(axis=(1, 2)) / (2.0 * self.s2)
            - self.r * self.k1 / 2.0 * np.log(2.0 * np.pi * self.s2)
        )

    def _softmax(self, b):
        scores = np.einsum("gk,dkr->dgr", self.uext, b)
        shifted = scores - scores.max(axis=2, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=2, keepdims=True), shifted - np.log(e.sum(axis=2, keepdims=True))

    def _neg_hessians(self, pi):
        """Dense negated Hessians, column-stacked ordering, for a subset of dims."""
        nd = pi.shape[0]
        a = -pi[:, :, :, None] * pi[:, :, None, :]
        rng = np.arange(self.r)
        a[:, :, rng, rng] += pi
        t = a.reshape(nd, self.g, self.r * self.r).transpose(0, 2, 1) @ self.wzz
        h = (
            t.reshape(nd, self.r, self.r, self.k1, self.k1)
            .transpose(0, 1, 3, 2, 4)
            .reshape(nd, self.r * self.k1, self.r * self.k1)
        )
        d = np.arange(self.r * self.k1)
        h[:, d, d] += 1.0 / self.s2
        return h

    def solve(self, b_init=None):
        """Newton MAP weights and log marginals for every dim in the bucket.

        Returns (log_marginals (D,), b_map (D, K1, R)).
        """
        b = np.zeros((self.n_dims, self.k1, self.r)) if b_init is None else b_init.copy()
        f = self._objective(b)
        rk1 = self.r * self.k1
        for _ in range(NEWTON_MAX_ITER):
            pi, _ = self._softmax(b)
            grad = self.m - np.einsum("g,gk,dgr->dkr", self.w, self.uext, pi) - b / self.s2
            gmax = np.abs(grad).max(axis=(1, 2)) if grad.size else np.zeros(self.n_dims)
            todo = np.where(gmax >= NEWTON_TOL)[0]
            if todo.size == 0:
                break
            h = self._neg_hessians(pi[todo])
            gflat = grad[todo].transpose(0, 2, 1).reshape(todo.size, rk1)
            delta = (
                np.linalg.solve(h, gflat[:, :, None])[:, :, 0]
                .reshape(todo.size, self.r, self.k1)
                .transpose(0, 2, 1)
            )
            step = np.ones(todo.size)
            fcur = f[todo]
            while True:
                btry = b[todo] + step[:, None, None] * delta
                ftry = self._objective_subset(btry, todo)
                bad = ftry < fcur - 1e-12
                if not bad.any() or step.min() < 2.0 ** -50:
                    break
                step[bad] *= 0.5
            b[todo] = btry
            f[todo] = ftry
        else:
            raise NewtonConvergenceError(
                f"batched Newton did not converge in {NEWTON_MAX_ITER} iterations"
            )

        pi, logpi = self._softmax(b)
        loglik = (self.c * logpi).sum(axis=(1, 2))
        h = self._neg_hessians(pi)
        logdet = np.linalg.slogdet(h)[1]
        marg = (
            -(b * b).sum(axis=(1, 2)) / (2.0 * self.s2)
            - 0.5 * (logdet + rk1 * np.log(self.s2))
            + loglik
        )
        return marg, b

    def _objective_subset(self, b, idx):
        scores = np.einsum("gk,dkr->dgr", self.uext, b)
        smax = scores.max(axis=2)
        lse = smax + np.log(np.exp(scores - smax[:, :, None]).sum(axis=2))
        return (
            (self.m[idx] * b).sum(axis=(1, 2))
            - lse @ self.w
            - (b * b).sum(axis=(1, 2)) / (2.0 * self.s2)
            - self.r * self.k1 / 2.0 * np.log(2.0 * np.pi * self.s2)
        )


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _solve_kernel(uext, w, c, s2, b, tol, max_iter):  # pragma: no cover
        """Per-dimension damped Newton + Laplace marginal, compiled.

        Mirrors MarginalBatch.solve; b is updated in place.  Returns the
        log marginals, or NaN entries on non-convergence.
        """
        n_dims, g, r = c.shape
        k1 = uext.shape[1]
        rk1 = r * k1
        const = r * k1 / 2.0 * np.log(2.0 * np.pi * s2)
        marg = np.empty(n_dims)
        scores = np.empty((g, r))
        pi = np.empty((g, r))
        grad = np.empty((k1, r))
        h = np.empty((rk1, rk1))
        m = np.empty((k1, r))
        for d in range(n_dims):
            bd = b[d]
            for k in range(k1):
                for j in range(r):
                    acc = 0.0
                    for q in range(g):
                        acc += c[d, q, j] * uext[q, k]
                    m[k, j] = acc

            fcur = -const
            for q in range(g):
                smax = -1e300
                for j in range(r):
                    s = 0.0
                    for k in range(k1):
                        s += uext[q, k] * bd[k, j]
                    scores[q, j] = s
                    if s > smax:
                        smax = s
                tot = 0.0
                for j in range(r):
                    tot += np.exp(scores[q, j] - smax)
                fcur -= w[q] * (smax + np.log(tot))
            for k in range(k1):
                for j in range(r):
                    fcur += m[k, j] * bd[k, j] - bd[k, j] * bd[k, j] / (2.0 * s2)

            converged = False
            for _ in range(max_iter):
                # softmax at current bd
                for q in range(g):
                    smax = -1e300
                    for j in range(r):
                        s = 0.0
                        for k in range(k1):
                            s += uext[q, k] * bd[k, j]
                        scores[q, j] = s
                        if s > smax:
                            smax = s
                    tot = 0.0
                    for j in range(r):
                        pi[q, j] = np.exp(scores[q, j] - smax)
                        tot += pi[q, j]
                    for j in range(r):
                        pi[q, j] /= tot
                gmax = 0.0
                for k in range(k1):
                    for j in range(r):
                        acc = m[k, j] - bd[k, j] / s2
                        for q in range(g):
                            acc -= w[q] * uext[q, k] * pi[q, j]
                        grad[k, j] = acc
                        if abs(acc) > gmax:
                            gmax = abs(acc)
                if gmax < tol:
                    converged = True
                    break
                # negated Hessian, column-stacked ordering (index j*k1 + k)
                for a in range(rk1):
                    for bb in range(rk1):
                        h[a, bb] = 0.0
                for q in range(g):
                    wq = w[q]
                    if wq == 0.0:
                        continue
                    for j1 in range(r):
                        for j2 in range(r):
                            coef = -pi[q, j1] * pi[q, j2]
                            if j1 == j2:
                                coef += pi[q, j1]
                            coef *= wq
                            if coef == 0.0:
                                continue
                            for k in range(k1):
                                uk = uext[q, k] * coef
                                if uk == 0.0:
                                    continue
                                for l in range(k1):
                                    h[j1 * k1 + k, j2 * k1 + l] += uk * uext[q, l]
                for a in range(rk1):
                    h[a, a] += 1.0 / s2
                gflat = np.empty(rk1)
                for j in range(r):
                    for k in range(k1):
                        gflat[j * k1 + k] = grad[k, j]
                delta = np.linalg.solve(h, gflat)
                step = 1.0
                while True:
                    ftry = -const
                    for q in range(g):
                        smax = -1e300
                        for j in range(r):
                            s = 0.0
                            for k in range(k1):
                                s += uext[q, k] * (bd[k, j] + step * delta[j * k1 + k])
                            scores[q, j] = s
                            if s > smax:
                                smax = s
                        tot = 0.0
                        for j in range(r):
                            tot += np.exp(scores[q, j] - smax)
                        ftry -= w[q] * (smax + np.log(tot))
                    for k in range(k1):
                        for j in range(r):
                            bkj = bd[k, j] + step * delta[j * k1 + k]
                            ftry += m[k, j] * bkj - bkj * bkj / (2.0 * s2)
                    if ftry >= fcur - 1e-12 or step < 2.0 ** -50:
                        break
                    step *= 0.5
                for k in range(k1):
                    for j in range(r):
                        bd[k, j] += step * delta[j * k1 + k]
                fcur = ftry
            if not converged:
                marg[d] = np.nan
                continue

            # marginal at the optimum
            loglik = 0.0
            for q in range(g):
                smax = -1e300
                for j in range(r):
                    s = 0.0
                    for k in range(k1):
                        s += uext[q, k] * bd[k, j]
                    scores[q, j] = s
                    if s > smax:
                        smax = s
                tot = 0.0
                for j in range(r):
                    pi[q, j] = np.exp(scores[q, j] - smax)
                    tot += pi[q, j]
                lse = smax + np.log(tot)
                for j in range(r):
                    pi[q, j] /= tot
                    if c[d, q, j] != 0.0:
                        loglik += c[d, q, j] * (scores[q, j] - lse)
            for a in range(rk1):
                for bb in range(rk1):
                    h[a, bb] = 0.0
            for q in range(g):
                wq = w[q]
                if wq == 0.0:
                    continue
                for j1 in range(r):
                    for j2 in range(r):
                        coef = -pi[q, j1] * pi[q, j2]
                        if j1 == j2:
                            coef += pi[q, j1]
                        coef *= wq
                        if coef == 0.0:
                            continue
                        for k in range(k1):
                            uk = uext[q, k] * coef
                            if uk == 0.0:
                                continue
                            for l in range(k1):
                                h[j1 * k1 + k, j2 * k1 + l] += uk * uext[q, l]
            for a in range(rk1):
                h[a, a] += 1.0 / s2
            chol = np.linalg.cholesky(h)
            logdet = 0.0
            for a in range(rk1):
                logdet += 2.0 * np.log(chol[a, a])
            quad = 0.0
            for k in range(k1):
                for j in range(r):
                    quad += bd[k, j] * bd[k, j]
            marg[d] = -quad / (2.0 * s2) - 0.5 * (logdet + rk1 * np.log(s2)) + loglik
        return marg


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _solve_kernel_r2(uext, w, c, s2, b, tol, max_iter):  # pragma: no cover
        """Two-category specialization of _solve_kernel.

        At the optimum the two weight columns are exact negatives, so the
        solve runs in the (K+1)-dimensional column difference u = b1 - b2
        with a logistic likelihood; the full-space log-determinant follows
        from log|H_B| = log|H_u| + (K+1) (log 2 + log sigma_B^2) after
        rotating the Hessian into sum/difference coordinates.
        """
        n_dims, g, _ = c.shape
        k1 = uext.shape[1]
        marg = np.empty(n_dims)
        t = np.empty(g)
        p = np.empty(g)
        for d in range(n_dims):
            u = np.empty(k1)
            for k in range(k1):
                u[k] = b[d, k, 0] - b[d, k, 1]

            # objective q(u) = sum_g [c1 log sig(t) + c2 log(1 - sig(t))]
            #                 - ||u||^2 / (4 s2)
            fcur = 0.0
            for q in range(g):
                tq = 0.0
                for k in range(k1):
                    tq += uext[q, k] * u[k]
                t[q] = tq
                sp_neg = np.log1p(np.exp(-tq)) if tq > -30.0 else -tq
                sp_pos = np.log1p(np.exp(tq)) if tq < 30.0 else tq
                fcur -= c[d, q, 0] * sp_neg + c[d, q, 1] * sp_pos
            for k in range(k1):
                fcur -= u[k] * u[k] / (4.0 * s2)

            converged = False
            grad = np.empty(k1)
            h = np.empty((k1, k1))
            for _ in range(max_iter):
                for q in range(g):
                    tq = 0.0
                    for k in range(k1):
                        tq += uext[q, k] * u[k]
                    t[q] = tq
                    p[q] = 1.0 / (1.0 + np.exp(-tq))
                gmax = 0.0
                for k in range(k1):
                    acc = -u[k] / (2.0 * s2)
                    for q in range(g):
                        acc += (c[d, q, 0] - w[q] * p[q]) * uext[q, k]
                    grad[k] = acc
                    if abs(acc) > gmax:
                        gmax = abs(acc)
                if gmax < tol:
                    converged = True
                    break
                for a in range(k1):
                    for bb in range(k1):
                        h[a, bb] = 0.0
                    h[a, a] = 1.0 / (2.0 * s2)
                for q in range(g):
                    coef = w[q] * p[q] * (1.0 - p[q])
                    if coef == 0.0:
                        continue
                    for a in range(k1):
                        ua = coef * uext[q, a]
                        if ua == 0.0:
                            continue
                        for bb in range(k1):
                            h[a, bb] += ua * uext[q, bb]
                delta = np.linalg.solve(h, grad)
                step = 1.0
                while True:
                    ftry = 0.0
                    for q in range(g):
                        tq = 0.0
                        for k in range(k1):
                            tq += uext[q, k] * (u[k] + step * delta[k])
                        sp_neg = np.log1p(np.exp(-tq)) if tq > -30.0 else -tq
                        sp_pos = np.log1p(np.exp(tq)) if tq < 30.0 else tq
                        ftry -= c[d, q, 0] * sp_neg + c[d, q, 1] * sp_pos
                    for k in range(k1):
                        uk = u[k] + step * delta[k]
                        ftry -= uk * uk / (4.0 * s2)
                    if ftry >= fcur - 1e-12 or step < 2.0 ** -50:
                        break
                    step *= 0.5
                for k in range(k1):
                    u[k] += step * delta[k]
                fcur = ftry
            if not converged:
                marg[d] = np.nan
                continue

            loglik = 0.0
            for q in range(g):
                tq = 0.0
                for k in range(k1):
                    tq += uext[q, k] * u[k]
                t[q] = tq
                p[q] = 1.0 / (1.0 + np.exp(-tq))
                sp_neg = np.log1p(np.exp(-tq)) if tq > -30.0 else -tq
                sp_pos = np.log1p(np.exp(tq)) if tq < 30.0 else tq
                loglik -= c[d, q, 0] * sp_neg + c[d, q, 1] * sp_pos
            for a in range(k1):
                for bb in range(k1):
                    h[a, bb] = 0.0
                h[a, a] = 1.0 / (2.0 * s2)
            for q in range(g):
                coef = w[q] * p[q] * (1.0 - p[q])
                if coef == 0.0:
                    continue
                for a in range(k1):
                    ua = coef * uext[q, a]
                    if ua == 0.0:
                        continue
                    for bb in range(k1):
                        h[a, bb] += ua * uext[q, bb]
            chol = np.linalg.cholesky(h)
            logdet_u = 0.0
            for a in range(k1):
                logdet_u += 2.0 * np.log(chol[a, a])
            quad = 0.0
            for k in range(k1):
                quad += u[k] * u[k]
            marg[d] = (
                -quad / (4.0 * s2)
                - 0.5 * (logdet_u + k1 * (np.log(2.0) + np.log(s2)))
                + loglik
            )
            for k in range(k1):
                b[d, k, 0] = 0.5 * u[k]
                b[d, k, 1] = -0.5 * u[k]
        return marg


class MarginalEvaluator:
    """Sum of per-dimension log marginals for arbitrary feature states over X.

    Dimensions are bucketed by cardinality so each bucket runs one batched
    solve.  ``b_init`` (list of per-bucket arrays) warm-starts Newton, which
    pays off when candidate states differ from an already-solved one by a
    single entry.  A compiled kernel is used when numba is importable;
    ``use_numba=False`` forces the pure-numpy path (the two are tested to
    agree to solver tolerance).
    """

    def __init__(self, codes, cardinalities, sigma_b_sq, use_numba=None):
        codes = np.asarray(codes)
        self.n_rows, self.n_dims = codes.shape
        self.s2 = float(sigma_b_sq)
        self.use_numba = HAVE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
        cards = np.asarray(cardinalities)
        self.buckets = []
        for r in np.unique(cards):
            dims = np.where(cards == r)[0]
            self.buckets.append((dims, int(r), np.ascontiguousarray(codes[:, dims])))

    def evaluate(self, u, row_gid, b_init=None):
        """Returns (total, per_dim (D,), b_list per bucket)."""
        per_dim = np.zeros(self.n_dims)
        b_out = []
        for i, (dims, r, codes_b) in enumerate(self.buckets):
            if self.use_numba:
                marg, b = self._solve_numba(u, row_gid, codes_b, r,
                                            None if b_init is None else b_init[i])
            else:
                batch = MarginalBatch(u, row_gid, codes_b, r, self.s2)
                marg, b = batch.solve(None if b_init is None else b_init[i])
            per_dim[dims] = marg
            b_out.append(b)
        return float(per_dim.sum()), per_dim, b_out

    def _solve_numba(self, u, row_gid, codes_b, r, b_init):
        g, k = u.shape
        uext = np.column_stack([np.ones(g), u.astype(np.float64)])
        w = np.bincount(row_gid, minlength=g).astype(np.float64)
        c = count_table(row_gid, codes_b, g, r)
        b = np.zeros((codes_b.shape[1], k + 1, r)) if b_init is None else b_init.copy()
        kernel = _solve_kernel_r2 if r == 2 else _solve_kernel
        marg = kernel(uext, w, c, self.s2, b, NEWTON_TOL, NEWTON_MAX_ITER)
        if np.isnan(marg).any():
            raise NewtonConvergenceError(
                f"batched Newton did not converge in {NEWTON_MAX_ITER} iterations"
            )
        return marg, b

    def state_marginals(self, z):
        """Marginals for a plain (ungrouped) binary state matrix."""
        u, row_gid = group_rows_by_pattern(np.asarray(z, dtype=np.int8))
        return self.evaluate(u, row_gid)
