"""Nonparametric latent-feature inference for categorical observations.

An Indian Buffet Process prior over binary feature matrices is paired with
a multinomial-logit observation model.  Two interchangeable engines infer
the features: a collapsed Gibbs sampler built on a Laplace-approximated
marginal likelihood, and a truncated stick-breaking variational algorithm.
Generators, analysis reports, a CLI, and sklearn-style estimator wrappers
round out the package.
"""

from .core import (
    Hyperparams,
    LatentFeatureState,
    ObservationMatrix,
    WeightStack,
    category_probabilities,
    left_order,
    log_likelihood,
    sample_prior,
)
from .errors import (
    BoundInconsistencyError,
    DegenerateUpdateError,
    NewtonConvergenceError,
    ShapeError,
)
from .gibbs import ChainTrace, GibbsChain, GibbsConfig, run_chain
from .laplace import LaplaceResult, fit_weights, log_marginal, newton_map
from .synthgen import ImageGenConfig, generate_categorical, generate_images
from .vi import VariationalState, VISchedule, binarize, lower_bound, run_vi

__version__ = "0.1.0"

__all__ = [
    "BoundInconsistencyError",
    "ChainTrace",
    "DegenerateUpdateError",
    "GibbsChain",
    "GibbsConfig",
    "Hyperparams",
    "ImageGenConfig",
    "LaplaceResult",
    "LatentFeatureState",
    "NewtonConvergenceError",
    "ObservationMatrix",
    "ShapeError",
    "VariationalState",
    "VISchedule",
    "WeightStack",
    "binarize",
    "category_probabilities",
    "fit_weights",
    "generate_categorical",
    "generate_images",
    "left_order",
    "log_likelihood",
    "log_marginal",
    "lower_bound",
    "newton_map",
    "run_chain",
    "run_vi",
    "sample_prior",
    "__version__",
]
