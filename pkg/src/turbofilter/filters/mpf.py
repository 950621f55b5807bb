"""Marginalized particle filter (Rao-Blackwellized PF) for CLG models.

Particles sample ``x_N``; each carries a Kalman filter over ``x_L``.  The
next-step particle acts as a measurement of ``x_L`` through the ``x_N``
dynamics, which is folded into the per-particle time update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, SingularMatrix
from ..gaussian import batch_log_likelihood, sample_batch, symmetrize
from ..ssm import ClgModel, particle_slots
from .particles import normalize_log_weights, systematic_resample


@dataclass(frozen=True, eq=False)
class MpfState:
    """Particles ``(n_p, d_n)`` with per-particle ``x_L`` means ``(n_p, d_l)`` and covariances."""

    points: np.ndarray
    lin_means: np.ndarray
    lin_covs: np.ndarray

    def __post_init__(self):
        n = self.points.shape[0]
        if self.lin_means.shape[0] != n or self.lin_covs.shape[0] != n:
            raise DimensionMismatch("particles and linear-state filters must have the same count")

    @property
    def n_p(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class MpfEstimate:
    x_lin: np.ndarray
    x_non: np.ndarray


def mpf_init(model: ClgModel, n_p: int, rng) -> MpfState:
    """Sample ``x_N`` from the prior and condition the ``x_L`` prior on each sample."""
    d_l, d_n = model.dims.d_l, model.dims.d_n
    init = model.init
    mu_l, mu_n = init.mean[:d_l], init.mean[d_l:]
    c_ll, c_ln, c_nn = init.cov[:d_l, :d_l], init.cov[:d_l, d_l:], init.cov[d_l:, d_l:]
    points = sample_batch(np.broadcast_to(mu_n, (n_p, d_n)), np.broadcast_to(c_nn, (n_p, d_n, d_n)), rng)
    if np.any(c_ln):
        gain = c_ln @ np.linalg.pinv(c_nn)
        means = mu_l + (points - mu_n) @ gain.T
        cov = symmetrize(c_ll - gain @ c_ln.T)
    else:
        means = np.broadcast_to(mu_l, (n_p, d_l)).copy()
        cov = c_ll
    return MpfState(points, means, np.broadcast_to(cov, (n_p, d_l, d_l)).copy())


def mpf_step(state: MpfState, model: ClgModel, l, y, rng, backend="vectorized"):
    """One MPF recursion; returns ``(state for l + 1, estimate at l)``.

    Order: PF weights from the marginal likelihood, estimates, per-particle
    KF measurement update, resampling, particle proposal, and the KF time
    update that conditions on the proposed particle.  ``backend="loop"``
    processes one particle at a time.
    """
    if backend == "loop":
        from .loop import mpf_step_loop

        return mpf_step_loop(state, model, l, y, rng)
    if backend != "vectorized":
        raise ValueError(f"unknown backend {backend!r}")
    y = np.asarray(y, dtype=float)
    pts, m, P = state.points, state.lin_means, state.lin_covs
    s = particle_slots(model, l, pts)
    B = s.b_meas
    r = y - s.g_meas - np.einsum("...ab,...b->...a", B, m)
    PBt = np.einsum("...ab,...cb->...ac", P, B)
    S = np.einsum("...ab,...bc->...ac", B, PBt) + model.cov_e
    log_q, logdet = batch_log_likelihood(r, S)
    weights = normalize_log_weights(log_q - 0.5 * logdet, step=l)

    K = np.swapaxes(np.linalg.solve(S, np.swapaxes(PBt, -1, -2)), -1, -2)
    m_f = m + np.einsum("jab,jb->ja", K, r)
    P_f = symmetrize(P - np.einsum("jab,jbc,jdc->jad", K, S, K))
    est = MpfEstimate(x_lin=weights @ m_f, x_non=weights @ pts)

    idx = systematic_resample(weights, rng)
    pts, m_f, P_f = pts[idx], m_f[idx], P_f[idx]
    s = particle_slots(model, l, pts)
    A_l, A_n = s.a_lin, s.a_non
    N = np.einsum("...ab,...bc,...dc->...ad", A_n, P_f, A_n) + model.cov_w_non
    new_points = sample_batch(np.einsum("...ab,...b->...a", A_n, m_f) + s.f_non, N, rng)
    z = new_points - s.f_non
    AlPAnt = np.einsum("...ab,...bc,...dc->...ad", A_l, P_f, A_n)
    try:
        L = np.swapaxes(np.linalg.solve(N, np.swapaxes(AlPAnt, -1, -2)), -1, -2)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix("A_N P A_N^T + C_wN is singular") from exc
    innov = z - np.einsum("...ab,...b->...a", A_n, m_f)
    m_p = np.einsum("...ab,...b->...a", A_l, m_f) + s.f_lin + np.einsum("jab,jb->ja", L, innov)
    P_p = (
        np.einsum("...ab,...bc,...dc->...ad", A_l, P_f, A_l)
        + model.cov_w_lin
        - np.einsum("jab,jbc,jdc->jad", L, N, L)
    )
    return MpfState(new_points, m_p, symmetrize(P_p)), est
