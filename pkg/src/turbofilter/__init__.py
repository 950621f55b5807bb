"""Turbo filtering for conditionally linear Gaussian state-space models.

The package provides Gaussian message algebra (:mod:`turbofilter.gaussian`),
CLG model definitions and simulation (:mod:`turbofilter.ssm`), the filters
(:mod:`turbofilter.filters`) and a Monte Carlo benchmark
(:mod:`turbofilter.bench`).
"""

from . import errors, gaussian, ssm
from .errors import (
    AllZeroWeights,
    ConfigError,
    DimensionMismatch,
    EmptyInput,
    FilterError,
    IndexOutOfRange,
    InvalidParams,
    NonDifferentiablePoint,
    NotPsd,
    SingularMatrix,
    ZeroTotalWeight,
)
from .gaussian import (
    GaussianCanonical,
    GaussianMoment,
    WeightedGaussianPair,
    affine_propagate,
    marginal_block,
    moment_match,
    overlap_weight,
    product,
)
from .ssm import AgentModel, AgentParams, ClgDims, ClgModel, LinearClgModel, agent_model, simulate

__version__ = "0.1.0"

__all__ = [
    "errors",
    "gaussian",
    "ssm",
    "GaussianCanonical",
    "GaussianMoment",
    "WeightedGaussianPair",
    "affine_propagate",
    "marginal_block",
    "moment_match",
    "overlap_weight",
    "product",
    "AgentModel",
    "AgentParams",
    "ClgDims",
    "ClgModel",
    "LinearClgModel",
    "agent_model",
    "simulate",
    "FilterError",
    "DimensionMismatch",
    "IndexOutOfRange",
    "SingularMatrix",
    "NotPsd",
    "EmptyInput",
    "ZeroTotalWeight",
    "InvalidParams",
    "NonDifferentiablePoint",
    "ConfigError",
    "AllZeroWeights",
]
