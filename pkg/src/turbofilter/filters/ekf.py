"""Extended Kalman filter acting on the full state.

The measurement update is done in canonical form so that the information
from the measurement and the predicted density simply add; the time update
is done in moment form.  The second measurement update folds in a
pseudo-measurement message about ``x_L`` coming from a particle filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, SingularMatrix
from ..gaussian import (
    GaussianCanonical,
    GaussianMoment,
    affine_propagate,
    canonical,
    marginal_block,
    moment,
    product,
    sym_inv,
    to_canonical,
    to_moment,
)
from ..ssm import ClgModel, linearize_dynamics, linearize_measurement


@dataclass(frozen=True, eq=False)
class EkfState:
    """Forward prediction ``fp`` for time ``l`` and, once updated, the estimate ``fe``."""

    fp: GaussianMoment
    fe: GaussianMoment | None = None


def ekf_init(model: ClgModel) -> EkfState:
    return EkfState(fp=model.init)


def ekf_first_mu(state: EkfState, model: ClgModel, l, y, return_canonical=False):
    """Measurement update of ``fp`` with ``y``; returns ``(fe1, fe1_L)``.

    The measurement function is linearized at the predicted mean.  With
    ``return_canonical`` the canonical form of ``fe1`` is appended, which
    spares :func:`ekf_second_mu` an inversion.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (model.dims.p,):
        raise DimensionMismatch(f"y has shape {y.shape}, expected {(model.dims.p,)}")
    fp = state.fp
    Ht, v = linearize_measurement(model, l, fp.mean)
    W_e = model.prec_e
    HW = Ht.T @ W_e
    W_fp = sym_inv(fp.cov, "C_fp")
    precision = W_fp + HW @ Ht
    shift = W_fp @ fp.mean + HW @ (y - v)
    fe1c = canonical(precision, shift)
    fe1 = to_moment(fe1c)
    fe1_L = marginal_block(fe1, (0, model.dims.d_l))
    if return_canonical:
        return fe1, fe1_L, fe1c
    return fe1, fe1_L


def ekf_second_mu(fe1, pm, d_l=None, fe1_canonical=None):
    """Combine the first-update estimate ``fe1`` with the PF message ``pm``.

    ``pm`` in canonical form (flat included) is combined by adding
    precisions; a flat message returns ``fe1`` unchanged.  ``pm`` in moment
    form uses ``C = (C_pm W_fe1 + I)^-1 C_pm``, which stays valid when
    ``C_pm`` is singular, e.g. with a single particle.

    ``fe1`` may be given in either form; ``fe1_canonical`` optionally
    supplies the canonical form of a moment-form ``fe1``.

    Returns ``(fe2, fe2_L)`` where ``fe2_L`` is the marginal over the first
    ``d_l`` coordinates (omitted when ``d_l`` is None).
    """
    d = fe1.dim
    if pm.dim != d:
        raise DimensionMismatch(f"pm has size {pm.dim}, expected {d}")
    if isinstance(fe1, GaussianCanonical):
        fe1c = fe1
    else:
        fe1c = fe1_canonical
    if isinstance(pm, GaussianCanonical) and pm.is_flat:
        fe2 = fe1 if isinstance(fe1, GaussianMoment) else fe1.to_moment()
    else:
        if fe1c is None:
            fe1c = to_canonical(fe1)
        if isinstance(pm, GaussianCanonical):
            fe2 = product(fe1c, pm).to_moment()
        else:
            # C_pm W_fe1 + I has eigenvalues >= 1 for PSD inputs
            lhs = pm.cov @ fe1c.precision + np.eye(d)
            rhs = np.column_stack([pm.cov, pm.cov @ fe1c.shift + pm.mean])
            try:
                sol = np.linalg.solve(lhs, rhs)
            except np.linalg.LinAlgError as exc:
                raise SingularMatrix("C_pm W_fe1 + I is singular") from exc
            fe2 = moment(sol[:, d], sol[:, :d])
    if d_l is None:
        return fe2, None
    return fe2, marginal_block(fe2, (0, d_l))


def ekf_time_update(state: EkfState, model: ClgModel, l) -> GaussianMoment:
    """Predict ``fp`` for ``l + 1`` from ``fe``; dynamics linearized at the ``fe`` mean."""
    fe = state.fe if state.fe is not None else state.fp
    F, u = linearize_dynamics(model, l, fe.mean)
    return affine_propagate(fe, F, u, model.cov_w)


def ekf_step(state: EkfState, model: ClgModel, l, y):
    """Plain EKF recursion: returns ``(next_state, estimate)`` with ``next_state.fp`` for ``l + 1``."""
    fe, _ = ekf_first_mu(state, model, l, y)
    fp = ekf_time_update(EkfState(state.fp, fe), model, l)
    return EkfState(fp=fp, fe=fe), fe.mean
