"""Bootstrap (SIR) particle filter over the full state."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidParams
from ..gaussian import batch_log_likelihood, psd_factor, sample
from ..ssm import ClgModel, compose_f, compose_h
from .particles import normalize_log_weights, systematic_resample


def sir_init(model: ClgModel, n_p: int, rng) -> np.ndarray:
    """Particles ``(n_p, d)`` from the prior; rejects a singular ``C_e``."""
    if np.linalg.eigvalsh(model.cov_e)[0] <= 0:
        raise InvalidParams("the SIR filter needs a positive definite C_e")
    return sample(model.init, rng, size=n_p)


def sir_pf_step(points, model: ClgModel, l, y, rng):
    """Weight by the likelihood, estimate, resample and propagate.

    Returns ``(particles for l + 1, posterior-mean estimate at l)``.
    """
    if np.linalg.eigvalsh(model.cov_e)[0] <= 0:
        raise InvalidParams("the SIR filter needs a positive definite C_e")
    r = np.asarray(y, dtype=float) - compose_h(model, l, points)
    log_w, _ = batch_log_likelihood(r, np.broadcast_to(model.cov_e, (points.shape[0],) + model.cov_e.shape))
    weights = normalize_log_weights(log_w, step=l)
    est = weights @ points
    points = points[systematic_resample(weights, rng)]
    noise = rng.standard_normal(points.shape) @ psd_factor(model.cov_w).T
    return compose_f(model, l, points) + noise, est
