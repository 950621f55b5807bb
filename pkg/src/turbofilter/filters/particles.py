"""Particle sets, log-domain weight normalization and systematic resampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import AllZeroWeights, DimensionMismatch, EmptyInput


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """Particles ``(n_p, d_n)`` with normalized weights ``(n_p,)``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if pts.shape[0] == 0:
            raise EmptyInput("particle set is empty")
        if w.shape != (pts.shape[0],):
            raise DimensionMismatch(f"weights have shape {w.shape}, expected {(pts.shape[0],)}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> ParticleSet:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / max(n, 1)))

    @property
    def n_p(self) -> int:
        return self.points.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points


def normalize_log_weights(log_w, step=None) -> np.ndarray:
    """Exponentiate and normalize log weights after subtracting their maximum.

    Raises :class:`AllZeroWeights` when every weight is zero or not finite.
    """
    log_w = np.asarray(log_w, dtype=float)
    if log_w.size == 0:
        raise EmptyInput("no weights to normalize")
    top = np.max(log_w)
    if not np.isfinite(top):
        raise AllZeroWeights("all particle weights are zero", step=step)
    w = np.exp(log_w - top)
    w[~np.isfinite(w)] = 0.0
    return w / w.sum()


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return 1.0 / float(w @ w)


def systematic_resample(weights, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn by systematic resampling; one uniform draw per call.

    Particles with zero weight are never selected.
    """
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    if n == 0:
        raise EmptyInput("no weights to resample")
    cum = np.cumsum(w)
    cum /= cum[-1]
    cum[-1] = 1.0
    positions = (np.arange(n) + rng.random()) / n
    return np.searchsorted(cum, positions, side="left")


def pf_second_mu_normalize_resample(particles: ParticleSet, log_w_fe1, log_w_pm, rng, step=None):
    """Combine both weight sets, normalize and resample.

    Returns ``(resampled, weights)``: a uniformly weighted set and the
    normalized weights of the input particles, which feed the estimate.
    """
    log_w = np.asarray(log_w_fe1, dtype=float) + np.asarray(log_w_pm, dtype=float)
    if log_w.shape != (particles.n_p,):
        raise DimensionMismatch(f"log weights have shape {log_w.shape}, expected {(particles.n_p,)}")
    w = normalize_log_weights(log_w, step=step)
    idx = systematic_resample(w, rng)
    return ParticleSet.uniform(particles.points[idx]), w
