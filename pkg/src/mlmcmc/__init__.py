"""Multilevel MCMC with coupled iterated-map kernels."""

from mlmcmc.rng import Purpose, RngStream, StreamKey, derive_stream
from mlmcmc.kernels import (
    GibbsBlock,
    IteratedMapKernel,
    TargetSpec,
    gibbs_kernel,
    gibbs_sweep_step,
    iterate,
    mh_kernel,
    mh_map_step,
    synthetic_target,
)
from mlmcmc.coupling import (
    CoupledState,
    IncrementSample,
    batch_means,
    coupled_step,
    coupled_trajectory,
    increment_mean,
)
from mlmcmc.hier_model import HierGaussModel, HierModelConfig
from mlmcmc.estimator import (
    LevelAllocation,
    MlEstimate,
    Rates,
    allocate,
    ml_estimate,
    single_level_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "CoupledState",
    "GibbsBlock",
    "HierGaussModel",
    "HierModelConfig",
    "IncrementSample",
    "IteratedMapKernel",
    "LevelAllocation",
    "MlEstimate",
    "Purpose",
    "Rates",
    "RngStream",
    "StreamKey",
    "TargetSpec",
    "allocate",
    "batch_means",
    "coupled_step",
    "coupled_trajectory",
    "derive_stream",
    "gibbs_kernel",
    "gibbs_sweep_step",
    "increment_mean",
    "iterate",
    "mh_kernel",
    "mh_map_step",
    "ml_estimate",
    "single_level_estimate",
    "synthetic_target",
]
