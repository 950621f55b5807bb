"""Per-particle reference implementations of the particle-level operations.

These mirror the vectorized routines in :mod:`turbofilter.filters.turbo`
and :mod:`turbofilter.filters.mpf` one particle at a time.  Quantities that
do not depend on the particle (model matrices when
``model.constant_matrices`` is set, and anything built only from them and
the EKF marginal) are computed once before the loop; everything else is
computed inside it.  Random draws are taken in the same order as in the
vectorized code (particle ``j`` uses row ``j`` of one standard-normal
block), so both backends produce the same numbers up to rounding.

With this backend the cost grows linearly with the number of particles,
which is the regime assumed by operation-count comparisons.
"""

from __future__ import annotations

import numpy as np

from ..errors import SingularMatrix
from ..gaussian import COND_LIMIT, GaussianMoment, psd_factor, symmetrize
from ..ssm import ClgModel
from .mpf import MpfEstimate, MpfState
from .particles import normalize_log_weights, systematic_resample
from .turbo import CZ_FLOOR, PM_RIDGE
from .turbo import _points as _pts


def _solve(S, r, what):
    try:
        return np.linalg.solve(S, r)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(f"{what} is singular") from exc


def pf_first_mu_loop(particles, model: ClgModel, l, y, fe2_L: GaussianMoment, det_factor=False):
    pts = _pts(particles)
    y = np.asarray(y, dtype=float)
    m, C = fe2_L.mean, fe2_L.cov
    out = np.empty(pts.shape[0])
    if model.constant_matrices:
        B = model.b_meas(l, pts[0])
        S = B @ C @ B.T + model.cov_e
        W = _solve(S, np.eye(S.shape[0]), "C_ms")
        base = y - B @ m
        for j, x in enumerate(pts):
            r = base - model.g_meas(l, x)
            out[j] = -0.5 * (r @ W @ r)
        if det_factor:
            out -= 0.5 * np.linalg.slogdet(S)[1]
        return out
    for j, x in enumerate(pts):
        B = model.b_meas(l, x)
        r = y - (B @ m + model.g_meas(l, x))
        S = B @ C @ B.T + model.cov_e
        out[j] = -0.5 * (r @ _solve(S, r, "C_ms"))
        if det_factor:
            out[j] -= 0.5 * np.linalg.slogdet(S)[1]
    return out


def _pm_weight(A, d_m, d_c, cov_w, floor, det_factor):
    a = A @ d_m
    c_z = symmetrize(cov_w + A @ d_c @ A.T)
    lam, vec = np.linalg.eigh(c_z)
    repaired = bool(np.any(lam < floor))
    if repaired:
        c_z = (vec * np.maximum(lam, floor)) @ vec.T
    c_sum = c_z + cov_w
    out = -0.5 * (a @ _solve(c_sum, a, "C_z + C_wL"))
    if det_factor:
        out -= 0.5 * np.linalg.slogdet(c_sum)[1]
    return out, repaired


def pmg_ekf_loop(particles, model: ClgModel, l, fe1_L, fe2_L, det_factor=False, info=None):
    pts = _pts(particles)
    n = pts.shape[0]
    d_m = fe2_L.mean - fe1_L.mean
    d_c = fe2_L.cov - fe1_L.cov
    if not np.any(d_m) and not np.any(d_c):
        if info is not None:
            info["cz_repaired"] = 0
        return np.zeros(n)
    cov_w = model.cov_w_lin
    floor = CZ_FLOOR * np.trace(cov_w)
    if model.constant_matrices:
        # f_j cancels from the overlap, so every particle gets the same weight
        w, rep = _pm_weight(model.a_lin(l, pts[0]), d_m, d_c, cov_w, floor, det_factor)
        if info is not None:
            info["cz_repaired"] = n * int(rep)
        return np.full(n, w)
    out = np.empty(n)
    repaired = 0
    for j, x in enumerate(pts):
        out[j], rep = _pm_weight(model.a_lin(l, x), d_m, d_c, cov_w, floor, det_factor)
        repaired += rep
    if info is not None:
        info["cz_repaired"] = repaired
    return out


def _pm_precision(A, W_w):
    AtW = A.T @ W_w
    lam, vec = np.linalg.eigh(symmetrize(AtW @ A))
    bad = lam[0] <= 0 or lam[0] * COND_LIMIT < lam[-1]
    if bad:
        lam = lam + PM_RIDGE * np.trace(W_w)
        if lam[0] <= 0:
            raise SingularMatrix("PM precision is singular after regularization")
    return AtW, (vec / lam) @ vec.T, bad


def pmg_pf_loop(particles, model: ClgModel, l, fe2_L: GaussianMoment, rng, info=None):
    pts = _pts(particles)
    n, d_n = pts.shape
    d_l = model.dims.d_l
    z_all = rng.standard_normal((n, d_n))
    W_w = model.prec_w_non
    new_points = np.empty((n, d_n))
    pm_means = np.empty((n, d_l))
    if model.constant_matrices:
        A = model.a_non(l, pts[0])
        shift = A @ fe2_L.mean
        factor = psd_factor(model.cov_w_non + A @ fe2_L.cov @ A.T)
        AtW, pm_cov, bad = _pm_precision(A, W_w)
        gain = pm_cov @ AtW
        for j, x in enumerate(pts):
            f = model.f_non(l, x)
            new_points[j] = shift + f + factor @ z_all[j]
            pm_means[j] = gain @ (new_points[j] - f)
        if info is not None:
            info["pm_regularized"] = n * int(bad)
        return new_points, pm_means, pm_cov
    pm_covs = np.empty((n, d_l, d_l))
    regularized = 0
    for j, x in enumerate(pts):
        A = model.a_non(l, x)
        f = model.f_non(l, x)
        cov = model.cov_w_non + A @ fe2_L.cov @ A.T
        new_points[j] = A @ fe2_L.mean + f + psd_factor(cov) @ z_all[j]
        AtW, pm_covs[j], bad = _pm_precision(A, W_w)
        regularized += bad
        pm_means[j] = pm_covs[j] @ (AtW @ (new_points[j] - f))
    if info is not None:
        info["pm_regularized"] = regularized
    return new_points, pm_means, pm_covs


def mpf_step_loop(state, model: ClgModel, l, y, rng):
    """Per-particle MPF recursion; same draws and ordering as :func:`mpf_step`.

    Each particle keeps its own ``x_L`` covariance, so the Kalman updates
    run inside the loop even when the model matrices are shared.
    """
    y = np.asarray(y, dtype=float)
    pts, m, P = state.points, state.lin_means, state.lin_covs
    n, d_n = pts.shape
    shared = model.constant_matrices

    def mats(x):
        return model.a_lin(l, x), model.a_non(l, x), model.b_meas(l, x)

    if shared:
        A_l, A_n, B = mats(pts[0])
    log_q = np.empty(n)
    m_f = np.empty_like(m)
    P_f = np.empty_like(P)
    for j, x in enumerate(pts):
        if not shared:
            A_l, A_n, B = mats(x)
        r = y - model.g_meas(l, x) - B @ m[j]
        PBt = P[j] @ B.T
        S = B @ PBt + model.cov_e
        try:
            chol = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrix("measurement covariance is not positive definite") from exc
        K = np.linalg.solve(S, PBt.T).T
        log_q[j] = -0.5 * (r @ np.linalg.solve(S, r)) - np.sum(np.log(np.diag(chol)))
        m_f[j] = m[j] + K @ r
        P_f[j] = symmetrize(P[j] - K @ S @ K.T)
    weights = normalize_log_weights(log_q, step=l)
    est = MpfEstimate(x_lin=weights @ m_f, x_non=weights @ pts)

    idx = systematic_resample(weights, rng)
    pts, m_f, P_f = pts[idx], m_f[idx], P_f[idx]
    z_all = rng.standard_normal((n, d_n))
    new_points = np.empty_like(pts)
    m_p = np.empty_like(m_f)
    P_p = np.empty_like(P_f)
    for j, x in enumerate(pts):
        if not shared:
            A_l, A_n, B = mats(x)
        f_l, f_n = model.f_lin(l, x), model.f_non(l, x)
        N = A_n @ P_f[j] @ A_n.T + model.cov_w_non
        new_points[j] = A_n @ m_f[j] + f_n + psd_factor(N) @ z_all[j]
        L = _solve(N, A_n @ P_f[j] @ A_l.T, "A_N P A_N^T + C_wN").T
        m_p[j] = A_l @ m_f[j] + f_l + L @ (new_points[j] - f_n - A_n @ m_f[j])
        P_p[j] = symmetrize(A_l @ P_f[j] @ A_l.T + model.cov_w_lin - L @ N @ L.T)
    return MpfState(new_points, m_p, P_p), est
