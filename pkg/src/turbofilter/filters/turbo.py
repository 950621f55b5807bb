"""Turbo filtering: an EKF and a particle filter exchanging pseudo-measurements.

Within one recursion the EKF (full state) and the PF (nonlinear substate,
one Gaussian over ``x_L`` per particle) run side by side and iteratively
pass pseudo-measurement (PM) messages:

* the PF turns its particles into a Gaussian message about the full state
  for the EKF (:func:`pmg_pf` then :func:`pmc_pf`);
* the EKF turns the information it gained from that message into
  per-particle weights for the PF (:func:`pmg_ekf`).

:func:`tf1_step` runs the EKF first in every iteration, :func:`tf2_step`
runs the PF first.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch, SingularMatrix
from ..gaussian import (
    COND_LIMIT,
    GaussianCanonical,
    GaussianMoment,
    batch_log_likelihood,
    mixture_moments,
    sample_batch,
    symmetrize,
)
from ..ssm import ClgModel, particle_matrix
from .ekf import EkfState, ekf_first_mu, ekf_second_mu, ekf_time_update
from .particles import ParticleSet, normalize_log_weights, pf_second_mu_normalize_resample

CZ_FLOOR = 1e-12
PM_RIDGE = 1e-9


@dataclass(frozen=True, eq=False)
class TfState:
    """Joint turbo-filter state at the start of a recursion."""

    ekf: EkfState
    particles: ParticleSet
    pm_to_ekf: GaussianCanonical | GaussianMoment
    k: int = 0
    n_it: int = 1

    def __post_init__(self):
        d = self.ekf.fp.dim
        if self.pm_to_ekf.dim != d:
            raise DimensionMismatch("pm message and EKF state sizes differ")
        if self.particles.points.shape[1] >= d:
            raise DimensionMismatch("particle dimension must be smaller than the full state")


@dataclass(frozen=True, eq=False)
class TfEstimate:
    """``x_lin`` from the EKF head, ``x_non`` from the weighted particles, ``x_non_ekf`` from the EKF head."""

    x_lin: np.ndarray
    x_non: np.ndarray
    x_non_ekf: np.ndarray


@dataclass
class DiagnosticTrace:
    """Per-iteration diagnostics; one row per ``(l, k)``."""

    rows: list = field(default_factory=list)

    FIELDS = ("l", "k", "weight_entropy", "c_fe2_eig_min", "c_fe2_eig_max", "pm_regularized", "cz_repaired")

    def record(self, l, k, weights, fe2: GaussianMoment, pm_regularized, cz_repaired):
        w = weights[weights > 0]
        entropy = float(-(w @ np.log(w)))
        lam = np.linalg.eigvalsh(fe2.cov)
        self.rows.append((l, k, entropy, float(lam[0]), float(lam[-1]), int(pm_regularized), int(cz_repaired)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.FIELDS)
            w.writerows(self.rows)


def tf_init(model: ClgModel, n_p: int, rng: np.random.Generator, n_it: int = 1) -> TfState:
    """EKF prior from ``model.init``; particles drawn from its ``x_N`` marginal."""
    d_l = model.dims.d_l
    init = model.init
    points = sample_batch(
        np.broadcast_to(init.mean[d_l:], (n_p, model.dims.d_n)),
        np.broadcast_to(init.cov[d_l:, d_l:], (n_p, model.dims.d_n, model.dims.d_n)),
        rng,
    )
    return TfState(
        ekf=EkfState(fp=init),
        particles=ParticleSet.uniform(points),
        pm_to_ekf=GaussianCanonical.flat(model.dims.d),
        k=0,
        n_it=n_it,
    )


def _points(particles):
    if isinstance(particles, ParticleSet):
        return particles.points
    return np.atleast_2d(np.asarray(particles, dtype=float))


def pf_first_mu(particles, model: ClgModel, l, y, fe2_L: GaussianMoment, det_factor=False):
    """Log weights ``log N(y; B m + g, B C B^T + C_e)`` per particle, up to a shared constant.

    ``(m, C)`` is the EKF's ``x_L`` marginal.  The ``det(C_ms)`` factor is
    dropped unless ``det_factor`` is set.
    """
    pts = _points(particles)
    B = particle_matrix(model, "b_meas", l, pts)
    eta = np.einsum("...ab,b->...a", B, fe2_L.mean) + model.g_meas(l, pts)
    S = np.einsum("...ab,bc,...dc->...ad", B, fe2_L.cov, B) + model.cov_e
    log_w, logdet = batch_log_likelihood(np.asarray(y, dtype=float) - eta, S)
    if det_factor:
        log_w = log_w - 0.5 * logdet
    return log_w


def pmg_ekf(particles, model: ClgModel, l, fe1_L: GaussianMoment, fe2_L: GaussianMoment, det_factor=False, info=None):
    """Per-particle log PM weights carrying the EKF's extra ``x_L`` information to the PF.

    For particle ``j`` the EKF's information gain, pushed through the
    ``x_L`` dynamics, gives ``N(z; A_j dm + f_j, C_wL + A_j dC A_j^T)`` with
    ``dm, dC`` the differences between the second and first update.  The
    weight is its overlap with ``N(z; f_j, C_wL)``.  The precision-form
    exponent ``0.5 (eta^T W eta - ...)`` cancels badly when the first
    covariance is nearly singular, so the equivalent
    ``-0.5 a^T (C_z + C_wL)^-1 a`` with ``a = A_j dm`` is evaluated instead.
    Since ``f_j`` drops out, the weights are equal for all particles
    whenever ``A_L`` does not depend on ``x_N``.

    Eigenvalues of ``C_z`` are clamped at ``CZ_FLOOR * trace(C_wL)``; the
    number of repaired particles is written to ``info["cz_repaired"]``.
    """
    pts = _points(particles)
    n = pts.shape[0]
    d_m = fe2_L.mean - fe1_L.mean
    d_c = fe2_L.cov - fe1_L.cov
    if not np.any(d_m) and not np.any(d_c):
        if info is not None:
            info["cz_repaired"] = 0
        return np.zeros(n)
    A = particle_matrix(model, "a_lin", l, pts)
    a = np.einsum("...ab,b->...a", A, d_m)
    cov_w = model.cov_w_lin
    c_z = symmetrize(cov_w + np.einsum("...ab,bc,...dc->...ad", A, d_c, A))
    lam, vec = np.linalg.eigh(c_z)
    floor = CZ_FLOOR * np.trace(cov_w)
    low = lam < floor
    if info is not None:
        repaired = np.any(low, axis=-1)
        info["cz_repaired"] = int(repaired.sum()) if repaired.ndim else n * int(repaired)
    if np.any(low):
        c_z = np.einsum("...ab,...b,...cb->...ac", vec, np.where(low, floor, lam), vec)
    c_sum = c_z + cov_w
    log_w, logdet = batch_log_likelihood(a, c_sum)
    if det_factor:
        log_w = log_w - 0.5 * logdet
    return np.broadcast_to(log_w, (n,)).copy()


def pmg_pf(particles, model: ClgModel, l, fe2_L: GaussianMoment, rng, info=None):
    """Propose particles for ``l + 1`` and build one PM Gaussian over ``x_L`` per particle.

    Returns ``(new_points, pm_means, pm_covs)``; ``pm_covs`` is a single
    ``(d_l, d_l)`` matrix when ``A_N`` is shared by all particles.  Particle
    ``j`` consumes the ``j``-th normal draw.  If ``A_N^T W_wN A_N`` is ill
    conditioned a ridge ``PM_RIDGE * trace(W_wN)`` is added and
    ``info["pm_regularized"]`` counts the affected particles.
    """
    pts = _points(particles)
    n = pts.shape[0]
    A = particle_matrix(model, "a_non", l, pts)
    f = model.f_non(l, pts)
    mean = np.einsum("...ab,b->...a", A, fe2_L.mean) + f
    cov = model.cov_w_non + np.einsum("...ab,bc,...dc->...ad", A, fe2_L.cov, A)
    new_points = sample_batch(mean, cov, rng)
    z = new_points - f
    W_w = model.prec_w_non
    AtW = np.einsum("...ba,bc->...ac", A, W_w)
    W_pm = symmetrize(AtW @ A)
    w_pm = np.einsum("...ab,...b->...a", AtW, z)
    lam, vec = np.linalg.eigh(W_pm)
    bad = (lam[..., 0] <= 0) | (lam[..., 0] * COND_LIMIT < lam[..., -1])
    if info is not None:
        info["pm_regularized"] = int(bad.sum()) if bad.ndim else n * int(bad)
    if np.any(bad):
        lam = lam + np.where(bad, PM_RIDGE * np.trace(W_w), 0.0)[..., None]
        if np.any(lam[..., 0] <= 0):
            raise SingularMatrix("PM precision is singular after regularization")
    pm_covs = np.einsum("...ab,...b,...cb->...ac", vec, 1.0 / lam, vec)
    pm_means = np.einsum("...ab,...b->...a", pm_covs, w_pm)
    return new_points, pm_means, pm_covs


def pmc_pf(pm_means, pm_covs, points) -> GaussianMoment:
    """Project the particle/PM pairs onto one Gaussian over ``[x_L, x_N]`` with uniform weights.

    ``pm_covs`` is ``(n, d_l, d_l)`` or one matrix shared by every pair.
    """
    return mixture_moments(points, pm_means, pm_covs)


BACKENDS = ("vectorized", "loop")


def particle_ops(backend="vectorized"):
    """``(pf_first_mu, pmg_ekf, pmg_pf)`` for the chosen backend."""
    if backend == "vectorized":
        return pf_first_mu, pmg_ekf, pmg_pf
    if backend == "loop":
        from .loop import pf_first_mu_loop, pmg_ekf_loop, pmg_pf_loop

        return pf_first_mu_loop, pmg_ekf_loop, pmg_pf_loop
    raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")


def _flat_pm(model):
    return GaussianCanonical.flat(model.dims.d)


def _finish(state_ekf_fp, fe1, fe1c, pm, model, l, weights, points, new_points, n_it):
    d_l = model.dims.d_l
    fe2, _ = ekf_second_mu(fe1, pm, None, fe1c)
    fp = ekf_time_update(EkfState(state_ekf_fp, fe2), model, l)
    est = TfEstimate(x_lin=fe2.mean[:d_l].copy(), x_non=weights @ points, x_non_ekf=fe2.mean[d_l:].copy())
    nxt = TfState(
        ekf=EkfState(fp=fp, fe=fe2),
        particles=ParticleSet.uniform(new_points),
        pm_to_ekf=pm,
        k=n_it,
        n_it=n_it,
    )
    return nxt, est


def tf1_step(
    state: TfState,
    model: ClgModel,
    l,
    y,
    n_it: int,
    rng,
    det_factors=(False, False),
    pm_exchange=True,
    trace: DiagnosticTrace | None = None,
    backend="vectorized",
):
    """One TF#1 recursion (EKF first in every iteration).

    Returns ``(next_state, estimate)``; ``next_state`` holds the EKF
    prediction and the proposed particles for ``l + 1``.  With
    ``pm_exchange=False`` both PM messages are flat and the EKF track is
    that of a standalone EKF.  ``backend="loop"`` evaluates the particle
    operations one particle at a time.
    """
    d_l = model.dims.d_l
    first_mu, pm_weights, pm_gen = particle_ops(backend)
    fe1, fe1_L, fe1c = ekf_first_mu(state.ekf, model, l, y, return_canonical=True)
    pm = _flat_pm(model)
    pts = state.particles.points
    info = {}
    for k in range(1, n_it + 1):
        fe2, fe2_L = ekf_second_mu(fe1, pm, d_l, fe1c)
        log_w1 = first_mu(pts, model, l, y, fe2_L, det_factors[0])
        if pm_exchange:
            log_wpm = pm_weights(pts, model, l, fe1_L, fe2_L, det_factors[1], info)
        else:
            log_wpm = 0.0
        resampled, weights = pf_second_mu_normalize_resample(
            ParticleSet.uniform(pts), log_w1, log_wpm, rng, step=l
        )
        w_points = pts
        new_points, pm_means, pm_covs = pm_gen(resampled, model, l, fe2_L, rng, info)
        pts = resampled.points
        pm = pmc_pf(pm_means, pm_covs, pts) if pm_exchange else _flat_pm(model)
        if trace is not None:
            trace.record(l, k, weights, fe2, info.get("pm_regularized", 0), info.get("cz_repaired", 0))
    return _finish(state.ekf.fp, fe1, fe1c, pm, model, l, weights, w_points, new_points, n_it)


def tf2_step(
    state: TfState,
    model: ClgModel,
    l,
    y,
    n_it: int,
    rng,
    det_factors=(False, False),
    pm_exchange=True,
    trace: DiagnosticTrace | None = None,
    backend="vectorized",
):
    """One TF#2 recursion (PF first in every iteration).

    The PF's weights in iteration ``k`` use the EKF PM computed in
    iteration ``k - 1`` (uniform at ``k = 1``).  After the last iteration
    the PF weights are recomputed with the final EKF marginal; they give
    the ``x_N`` estimate while the next particle set is uniformly weighted.
    Other arguments are as for :func:`tf1_step`.
    """
    d_l = model.dims.d_l
    first_mu, pm_weights, pm_gen = particle_ops(backend)
    fe1, fe1_L, fe1c = ekf_first_mu(state.ekf, model, l, y, return_canonical=True)
    fe2, fe2_L = fe1, fe1_L
    pm = _flat_pm(model)
    pts = state.particles.points
    log_wpm = np.zeros(pts.shape[0])
    info = {}
    for k in range(1, n_it + 1):
        log_w1 = first_mu(pts, model, l, y, fe2_L, det_factors[0])
        resampled, weights = pf_second_mu_normalize_resample(
            ParticleSet.uniform(pts), log_w1, log_wpm, rng, step=l
        )
        new_points, pm_means, pm_covs = pm_gen(resampled, model, l, fe2_L, rng, info)
        pts = resampled.points
        pm = pmc_pf(pm_means, pm_covs, pts) if pm_exchange else _flat_pm(model)
        fe2, fe2_L = ekf_second_mu(fe1, pm, d_l, fe1c)
        if pm_exchange:
            log_wpm = pm_weights(pts, model, l, fe1_L, fe2_L, det_factors[1], info)
        if trace is not None:
            trace.record(l, k, weights, fe2, info.get("pm_regularized", 0), info.get("cz_repaired", 0))
    log_w1 = first_mu(pts, model, l, y, fe2_L, det_factors[0])
    weights = normalize_log_weights(log_w1 + log_wpm, step=l)
    return _finish(state.ekf.fp, fe1, fe1c, pm, model, l, weights, pts, new_points, n_it)
