"""Nuclear-norm penalized trace regression and matrix completion.

Submodules: ``linalg`` (SVD helpers, Schatten norms, matrix text format),
``designs`` (sampling designs, noise, observation files), ``estimators``
(closed form and proximal solver, lambda rules, oracle bounds),
``stochastic`` (the noise matrix M and Bernstein-type bounds),
``spectral_rank`` (rank recovery), ``lasso`` (vector specialization),
``lowerbound`` (packing constructions and KL divergences) and ``cli``.
"""

from .designs import Design, NoiseModel, ObservationSet, generate_ground_truth, sample_observations
from .estimators import LambdaRule, SolverConfig, estimate_completion, select_lambda, solve_penalized
from .linalg import schatten_norm, soft_threshold_svd, svd, trace_inner

__all__ = [
    "Design", "NoiseModel", "ObservationSet", "generate_ground_truth", "sample_observations",
    "LambdaRule", "SolverConfig", "estimate_completion", "select_lambda", "solve_penalized",
    "schatten_norm", "soft_threshold_svd", "svd", "trace_inner",
]

__version__ = "0.1.0"
