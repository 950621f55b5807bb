"""EKF, particle, marginalized particle and turbo filters."""

from .complexity import ComplexityInputs, complexity_estimate
from .ekf import EkfState, ekf_first_mu, ekf_init, ekf_second_mu, ekf_step, ekf_time_update
from .mpf import MpfEstimate, MpfState, mpf_init, mpf_step
from .particles import (
    ParticleSet,
    effective_sample_size,
    normalize_log_weights,
    pf_second_mu_normalize_resample,
    systematic_resample,
)
from .runner import FILTERS, FilterRun, run_filter
from .sir import sir_init, sir_pf_step
from .turbo import (
    BACKENDS,
    DiagnosticTrace,
    TfEstimate,
    TfState,
    pf_first_mu,
    pmc_pf,
    pmg_ekf,
    pmg_pf,
    tf1_step,
    tf2_step,
    particle_ops,
    tf_init,
)

__all__ = [
    "ComplexityInputs",
    "complexity_estimate",
    "EkfState",
    "ekf_first_mu",
    "ekf_init",
    "ekf_second_mu",
    "ekf_step",
    "ekf_time_update",
    "MpfEstimate",
    "MpfState",
    "mpf_init",
    "mpf_step",
    "ParticleSet",
    "effective_sample_size",
    "normalize_log_weights",
    "pf_second_mu_normalize_resample",
    "systematic_resample",
    "FILTERS",
    "FilterRun",
    "run_filter",
    "sir_init",
    "sir_pf_step",
    "BACKENDS",
    "DiagnosticTrace",
    "particle_ops",
    "TfEstimate",
    "TfState",
    "pf_first_mu",
    "pmc_pf",
    "pmg_ekf",
    "pmg_pf",
    "tf1_step",
    "tf2_step",
    "tf_init",
]
