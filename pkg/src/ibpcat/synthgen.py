"""Synthetic data generators used for verification.

Two processes: the binary-image construction (base masks composited by OR,
then one-directional multiplicative noise on white pixels) and a generic
planted-feature categorical process following the model's own generative
story (Bernoulli feature columns, Gaussian weights, softmax observations).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Hyperparams, ObservationMatrix, WeightStack, extend, softmax_rows

BLACK, WHITE = 1, 2


def _mask(height, width, pixels):
    m = np.zeros((height, width), dtype=bool)
    for r, c in pixels:
        m[r, c] = True
    return m


# Four disjoint 6x6 corner shapes (plus, cross, open box, corner L).  The
# shapes themselves are a configurable default; inference only needs them
# to be distinct and overlapping-free.
DEFAULT_BASE_IMAGES = (
    _mask(6, 6, [(0, 1), (1, 0), (1, 1), (1, 2), (2, 1)]),
    _mask(6, 6, [(0, 3), (0, 5), (1, 4), (2, 3), (2, 5)]),
    _mask(6, 6, [(3, 0), (3, 1), (3, 2), (4, 0), (4, 2), (5, 0), (5, 1), (5, 2)]),
    _mask(6, 6, [(3, 3), (4, 3), (5, 3), (5, 4), (5, 5)]),
)


@dataclass(frozen=True)
class ImageGenConfig:
    n_samples: int
    base_images: tuple = DEFAULT_BASE_IMAGES
    presence_prob: float = 0.3
    noise_flip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.base_images:
            raise ValueError("at least one base image is required")
        shape = np.asarray(self.base_images[0]).shape
        for img in self.base_images:
            if np.asarray(img).shape != shape:
                raise ValueError("all base images must share one shape")
        if not (0.0 <= self.presence_prob <= 1.0 and 0.0 <= self.noise_flip_prob <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def generate_images(config: ImageGenConfig, rng: np.random.Generator | None = None):
    """Sample composite noisy images; returns (ObservationMatrix, true Z).

    Each base is present independently with ``presence_prob``; the composite
    is the pixelwise OR; every white composite pixel flips to black with
    ``noise_flip_prob`` (black pixels never flip).  Pixels are flattened
    row-major and encoded 1 = black, 2 = white.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    bases = np.array([np.asarray(b, dtype=bool).ravel() for b in config.base_images])
    k, d = bases.shape
    n = config.n_samples
    true_z = (rng.random((n, k)) < config.presence_prob).astype(np.int8)
    composite = (true_z @ bases) > 0
    survive = rng.random((n, d)) >= config.noise_flip_prob
    white = composite & survive
    data = np.where(white, WHITE, BLACK)
    return ObservationMatrix(data, [2] * d), true_z


def generate_categorical(n_rows: int, n_cols: int, k_true: int, cardinalities,
                         hyper: Hyperparams, rng: np.random.Generator,
                         p_active=0.3):
    """Planted-model sample: (X, true Z, true weights).

    Z columns are Bernoulli(p_active) (scalar or per-column), weights are
    Normal(0, sigma_B^2) including the bias row, and categories are drawn
    from the softmax probabilities.
    """
    if k_true < 0:
        raise ValueError("k_true must be >= 0")
    cards = np.broadcast_to(np.asarray(cardinalities, dtype=np.int64), (n_cols,))
    p = np.broadcast_to(np.asarray(p_active, dtype=float), (k_true,))
    z = (rng.random((n_rows, k_true)) < p[None, :]).astype(np.int8)
    scale = np.sqrt(hyper.sigma_b_sq)
    mats = [rng.normal(0.0, scale, size=(k_true + 1, r)) for r in cards]
    zext = extend(z)
    data = np.empty((n_rows, n_cols), dtype=np.int64)
    for d in range(n_cols):
        probs = softmax_rows(zext @ mats[d])
        u = rng.random(n_rows)
        data[:, d] = 1 + (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
    return ObservationMatrix(data, cards), z, WeightStack(mats)
