"""Particle-based variational inference.

Stein mixture inference moves an ensemble of guide parameters with a
kernelized transport update so the uniform mixture over the per-particle
guides approximates the posterior; point-mass guides reduce the update to
SVGD (with an optional annealing schedule), and one particle reduces it to
ordinary VI or MAP.
"""

from .engine import (
    RunConfig,
    RunResult,
    anneal_factor,
    check_convergence,
    combine_forces,
    elbo_estimate,
    map_step,
    mixture_grads,
    ovi_step,
    resume_from_checkpoint,
    run_inference,
    save_checkpoint,
    svgd_grads,
)
from .guides import GaussianGuide, PointMassGuide
from .kernels import RbfKernel, median_bandwidth
from .metrics import (
    AtLimit,
    dimension_marginal_variance,
    frobenius_to_identity,
    hdi,
    lppd,
    lppd_from_log,
    nll_per_point,
    posterior_predictive,
    recovery_point,
    rmse,
)
from .models import (
    BnnRegressionModel,
    Dataset,
    GaussianTarget,
    NormalLocationModel,
    NumericalFailure,
    generate_wave_dataset,
    load_csv_dataset,
    minibatch_expectation_check,
    wave_mean,
)

__version__ = "0.1.0"

__all__ = [
    "AtLimit",
    "BnnRegressionModel",
    "Dataset",
    "GaussianGuide",
    "GaussianTarget",
    "NormalLocationModel",
    "NumericalFailure",
    "PointMassGuide",
    "RbfKernel",
    "RunConfig",
    "RunResult",
    "anneal_factor",
    "check_convergence",
    "combine_forces",
    "dimension_marginal_variance",
    "elbo_estimate",
    "frobenius_to_identity",
    "generate_wave_dataset",
    "hdi",
    "load_csv_dataset",
    "lppd",
    "lppd_from_log",
    "map_step",
    "median_bandwidth",
    "minibatch_expectation_check",
    "mixture_grads",
    "nll_per_point",
    "ovi_step",
    "posterior_predictive",
    "recovery_point",
    "resume_from_checkpoint",
    "rmse",
    "run_inference",
    "save_checkpoint",
    "svgd_grads",
    "wave_mean",
]
