"""Post-inference reporting over a feature state and MAP weights.

Implements the comorbidity-style report battery: pattern-conditional
category probabilities against empirical baselines, probability ratios,
feature prevalence, pairwise and conditional co-occurrence, the pattern
census, and prevalence-driven feature flipping.  Undefined ratios (zero
baselines, empty conditioning features) are carried as NaN markers so
report columns stay aligned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    Hyperparams,
    LatentFeatureState,
    ObservationMatrix,
    WeightStack,
    category_probabilities,
)
from .errors import ShapeError
from .laplace import fit_weights


@dataclass(frozen=True)
class FeaturePattern:
    """A set of active features (1-based indices); the bias is always on."""

    active: frozenset

    def __init__(self, active=()):
        object.__setattr__(self, "active", frozenset(int(i) for i in active))

    def validate(self, k_active: int):
        for i in self.active:
            if not 1 <= i <= k_active:
                raise ShapeError(f"feature index {i} outside 1..{k_active}")

    def indicator(self, k_active: int) -> np.ndarray:
        self.validate(k_active)
        z = np.zeros(k_active)
        for i in self.active:
            z[i - 1] = 1.0
        return z

    def label(self) -> str:
        if not self.active:
            return "none"
        return "+".join(f"f{i}" for i in sorted(self.active))


def pattern_probabilities(B: WeightStack, pattern: FeaturePattern):
    """Per-dimension category probabilities when exactly this pattern is active."""
    z_row = np.concatenate([[1.0], pattern.indicator(B.k_active)])
    return [category_probabilities(z_row, m) for m in B.mats]


def empirical_baseline(X: ObservationMatrix, target_category_per_dim) -> np.ndarray:
    """Fraction of rows hitting the target category, per dimension."""
    targets = np.broadcast_to(np.asarray(target_category_per_dim, dtype=np.int64), (X.n_cols,))
    if np.any(targets < 1) or np.any(targets > X.cardinalities):
        raise ValueError("target categories must lie within each dimension's cardinality")
    return (X.codes == (targets - 1)[None, :]).mean(axis=0)


def probability_ratio(pattern_probs, baseline) -> np.ndarray:
    """Elementwise pattern probability over baseline; NaN where baseline is 0."""
    pattern_probs = np.asarray(pattern_probs, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    out = np.full(baseline.shape, np.nan)
    ok = baseline > 0
    out[ok] = pattern_probs[ok] / baseline[ok]
    return out


def feature_prevalence(Z: LatentFeatureState):
    """(m_k / N, fraction of rows with exactly feature k alone) per feature."""
    n = Z.n_rows
    prevalence = Z.column_counts / n
    row_sums = Z.z.sum(axis=1)
    single = np.array(
        [np.sum((Z.z[:, k] == 1) & (row_sums == 1)) / n for k in range(Z.k_active)]
    )
    return prevalence, single


def wildcard_prevalence(Z: LatentFeatureState, features) -> float:
    """Fraction of rows with at least the given features active (1-based)."""
    pattern = FeaturePattern(features)
    pattern.validate(Z.k_active)
    idx = [i - 1 for i in sorted(pattern.active)]
    if not idx:
        return 1.0
    return float(np.mean(Z.z[:, idx].min(axis=1) == 1))


def cooccurrence_tables(Z: LatentFeatureState):
    """Pairwise at-least-both probabilities: (empirical, product-of-marginals)."""
    if Z.k_active < 2:
        raise ShapeError("co-occurrence needs at least two features")
    z = Z.z.astype(float)
    empirical = (z.T @ z) / Z.n_rows
    prevalence = Z.column_counts / Z.n_rows
    product = np.outer(prevalence, prevalence)
    return empirical, product


def conditional_cooccurrence(Z: LatentFeatureState) -> np.ndarray:
    """P(k2 active | k1 active) per pair; rows with empty k1 are NaN."""
    z = Z.z.astype(float)
    joint = z.T @ z
    counts = Z.column_counts.astype(float)
    out = np.full((Z.k_active, Z.k_active), np.nan)
    ok = counts > 0
    out[ok, :] = joint[ok, :] / counts[ok, None]
    return out


def _pattern_value(bits) -> int:
    """Binary value of a pattern with feature 1 as the most significant bit."""
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return value


def pattern_census(Z: LatentFeatureState, top_m: int):
    """The top_m most frequent feature rows as (pattern tuple, count).

    Sorted by count descending; ties break toward the smaller binary value
    of the pattern (feature 1 most significant).
    """
    patterns, counts = np.unique(Z.z, axis=0, return_counts=True)
    entries = [
        (tuple(int(v) for v in patterns[i]), int(counts[i])) for i in range(len(counts))
    ]
    entries.sort(key=lambda e: (-e[1], _pattern_value(e[0])))
    return entries[:top_m]


def flip_prevalent_features(Z: LatentFeatureState, threshold: float = 0.8):
    """Complement columns held by strictly more than ``threshold`` of the rows.

    Returns (flipped state, list of flipped 0-based column indices) so the
    caller can re-fit the companion weights.
    """
    prevalence = Z.column_counts / Z.n_rows
    flipped = [k for k in range(Z.k_active) if prevalence[k] > threshold]
    z = Z.z.copy()
    for k in flipped:
        z[:, k] = 1 - z[:, k]
    return LatentFeatureState(z), flipped


# -- report emission -------------------------------------------------------------


def _fmt(x) -> str:
    return format(float(x), ".12g")


def _write_csv(path: Path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def emit_reports(out_dir, X: ObservationMatrix, Z: LatentFeatureState,
                 weights: WeightStack | None, hyper: Hyperparams,
                 target_categories=None, top_m: int = 20,
                 flip_threshold: float | None = None):
    """Write the full table/curve battery as CSVs plus a JSON manifest.

    When ``flip_threshold`` is set, over-prevalent features are complemented
    and the weights are re-fit on the flipped state before reporting (the
    manifest records both).  Returns the manifest dictionary.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    flipped: list = []
    weights_refit = False
    if flip_threshold is not None:
        Z, flipped = flip_prevalent_features(Z, flip_threshold)
        if flipped:
            weights, _ = fit_weights(X, Z, hyper)
            weights_refit = True
    if weights is None:
        weights, _ = fit_weights(X, Z, hyper)
        weights_refit = True
    targets = (
        np.asarray(X.cardinalities)
        if target_categories is None
        else np.broadcast_to(np.asarray(target_categories, dtype=np.int64), (X.n_cols,))
    )
    k = Z.k_active
    dim_names = [f"dim{d + 1}" for d in range(X.n_cols)]
    files = []

    prevalence, single = feature_prevalence(Z)
    _write_csv(
        out / "prevalence.csv",
        ["feature", "prevalence", "single_feature_prevalence"],
        [[f"f{i + 1}", _fmt(prevalence[i]), _fmt(single[i])] for i in range(k)],
    )
    files.append("prevalence.csv")

    if k >= 2:
        empirical, product = cooccurrence_tables(Z)
        conditional = conditional_cooccurrence(Z)
        for name, table in (
            ("cooccurrence_empirical.csv", empirical),
            ("cooccurrence_product.csv", product),
            ("conditional_cooccurrence.csv", conditional),
        ):
            _write_csv(
                out / name,
                ["feature"] + [f"f{i + 1}" for i in range(k)],
                [[f"f{i + 1}"] + [_fmt(table[i, j]) for j in range(k)] for i in range(k)],
            )
            files.append(name)

    census = pattern_census(Z, top_m)
    _write_csv(
        out / "pattern_census.csv",
        ["pattern", "count"],
        [["".join(str(b) for b in pat), str(cnt)] for pat, cnt in census],
    )
    files.append("pattern_census.csv")

    baseline = empirical_baseline(X, targets)
    _write_csv(
        out / "baseline.csv",
        ["dimension", "target_category", "baseline"],
        [[dim_names[d], str(int(targets[d])), _fmt(baseline[d])] for d in range(X.n_cols)],
    )
    files.append("baseline.csv")

    patterns = [FeaturePattern()] + [FeaturePattern([i + 1]) for i in range(k)]
    prob_rows, ratio_rows = [], []
    for pattern in patterns:
        probs = pattern_probabilities(weights, pattern)
        target_probs = np.array([probs[d][targets[d] - 1] for d in range(X.n_cols)])
        ratios = probability_ratio(target_probs, baseline)
        prob_rows.append([pattern.label()] + [_fmt(v) for v in target_probs])
        ratio_rows.append([pattern.label()] + [_fmt(v) for v in ratios])
    _write_csv(out / "pattern_probabilities.csv", ["pattern"] + dim_names, prob_rows)
    _write_csv(out / "probability_ratios.csv", ["pattern"] + dim_names, ratio_rows)
    files.extend(["pattern_probabilities.csv", "probability_ratios.csv"])

    manifest = {
        "files": files,
        "n_features": k,
        "flipped_features": [f + 1 for f in flipped],
        "weights_refit": weights_refit,
        "target_categories": [int(t) for t in targets],
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
