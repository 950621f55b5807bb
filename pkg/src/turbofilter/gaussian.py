"""Gaussian algebra used to build every filter message.

Two parameterizations are supported: moment form (mean, covariance) and
canonical form (precision ``W = C^-1``, shift ``w = W @ mean``).  The flat
(unity) message is the canonical Gaussian with ``W = 0`` and ``w = 0``, so
multiplying by it needs no special case.

The three sum-product rules used throughout are:

* :func:`product` -- equality node, precisions and shifts add;
* :func:`affine_propagate` -- linear-Gaussian function node;
* :func:`overlap_weight` -- integral of the product of two Gaussians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatch,
    EmptyInput,
    IndexOutOfRange,
    NotPsd,
    SingularMatrix,
    ZeroTotalWeight,
)

COND_LIMIT = 1e14
PSD_RTOL = 1e-10


def symmetrize(m):
    """Return ``(m + m.T) / 2`` over the last two axes."""
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _psd_scale(m):
    return max(float(np.abs(np.trace(m))), float(np.abs(m).max(initial=0.0)))


def check_psd(m, name="matrix"):
    """Raise :class:`NotPsd` if ``m`` has an eigenvalue below ``-1e-10 * scale``."""
    if m.size == 0:
        return
    if not np.all(np.isfinite(m)):
        raise NotPsd(f"{name} has non-finite entries")
    lam_min = np.linalg.eigvalsh(m)[0]
    if lam_min < -PSD_RTOL * _psd_scale(m):
        raise NotPsd(f"{name} is not positive semidefinite (min eigenvalue {lam_min:.3e})")


def _check_square(m, n, name):
    if m.shape != (n, n):
        raise DimensionMismatch(f"{name} has shape {m.shape}, expected {(n, n)}")


def safe_inv(m, name="matrix"):
    """Invert a (stack of) matrix, raising :class:`SingularMatrix` above the condition limit."""
    m = np.asarray(m, dtype=float)
    cond = np.linalg.cond(m)
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise SingularMatrix(f"{name} is singular to working precision (cond={np.max(cond):.3e})")
    return np.linalg.inv(m)


def sym_inv(m, name="matrix"):
    """Invert a (stack of) symmetric matrix through its eigendecomposition.

    Raises :class:`SingularMatrix` when ``max|lambda| / min|lambda|`` exceeds
    the condition limit.
    """
    lam, vec = np.linalg.eigh(symmetrize(m))
    mag = np.abs(lam)
    lo, hi = mag.min(axis=-1), mag.max(axis=-1)
    if np.any(~(lo * COND_LIMIT > hi)):
        raise SingularMatrix(f"{name} is singular to working precision")
    return np.einsum("...ab,...b,...cb->...ac", vec, 1.0 / lam, vec)


def _trusted(cls, **fields):
    # results of the algebra below are PSD by construction; skip re-validation
    obj = object.__new__(cls)
    for k, v in fields.items():
        object.__setattr__(obj, k, v)
    return obj


@dataclass(frozen=True, eq=False)
class GaussianMoment:
    """Gaussian density in mean/covariance form."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.ndim != 1:
            raise DimensionMismatch(f"mean must be a vector, got shape {mean.shape}")
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        _check_square(cov, mean.shape[0], "cov")
        cov = symmetrize(cov)
        check_psd(cov, "cov")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def to_canonical(self) -> GaussianCanonical:
        return to_canonical(self)

    def logpdf(self, x) -> float:
        """Normalized log density at ``x`` (requires an invertible covariance)."""
        x = np.asarray(x, dtype=float)
        d = x - self.mean
        sign, logdet = np.linalg.slogdet(self.cov)
        if sign <= 0:
            raise SingularMatrix("covariance is singular")
        quad = d @ np.linalg.solve(self.cov, d)
        return -0.5 * (quad + logdet + self.dim * math.log(2.0 * math.pi))

    def pdf(self, x) -> float:
        return math.exp(self.logpdf(x))


@dataclass(frozen=True, eq=False)
class GaussianCanonical:
    """Gaussian in canonical form; ``precision`` may be singular (flat messages)."""

    precision: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        shift = np.atleast_1d(np.asarray(self.shift, dtype=float))
        if shift.ndim != 1:
            raise DimensionMismatch(f"shift must be a vector, got shape {shift.shape}")
        precision = np.atleast_2d(np.asarray(self.precision, dtype=float))
        _check_square(precision, shift.shape[0], "precision")
        precision = symmetrize(precision)
        check_psd(precision, "precision")
        object.__setattr__(self, "precision", precision)
        object.__setattr__(self, "shift", shift)

    @classmethod
    def flat(cls, n: int) -> GaussianCanonical:
        """The unity message over ``n`` variables."""
        return cls(np.zeros((n, n)), np.zeros(n))

    @property
    def dim(self) -> int:
        return self.shift.shape[0]

    @property
    def is_flat(self) -> bool:
        return not np.any(self.precision) and not np.any(self.shift)

    def to_moment(self) -> GaussianMoment:
        return to_moment(self)


@dataclass(frozen=True, eq=False)
class WeightedGaussianPair:
    """One mixture term ``weight * N(x_L; gaussian) * delta(x_N - point)``."""

    point: np.ndarray
    gaussian: GaussianMoment
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "point", np.atleast_1d(np.asarray(self.point, dtype=float)))
        if not self.weight >= 0:
            raise ValueError(f"weight must be nonnegative, got {self.weight}")


def moment(mean, cov) -> GaussianMoment:
    """Build a :class:`GaussianMoment` from arrays known to be valid; symmetrizes only."""
    return _trusted(GaussianMoment, mean=np.asarray(mean, dtype=float), cov=symmetrize(cov))


def canonical(precision, shift) -> GaussianCanonical:
    """Build a :class:`GaussianCanonical` from arrays known to be valid; symmetrizes only."""
    return _trusted(GaussianCanonical, precision=symmetrize(precision), shift=np.asarray(shift, dtype=float))


def to_canonical(g: GaussianMoment) -> GaussianCanonical:
    precision = sym_inv(g.cov, "covariance")
    return canonical(precision, precision @ g.mean)


def to_moment(c: GaussianCanonical) -> GaussianMoment:
    cov = sym_inv(c.precision, "precision")
    return moment(cov @ c.shift, cov)


def product(a: GaussianCanonical, b: GaussianCanonical) -> GaussianCanonical:
    """Equality-node rule: precisions add and shifts add."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"cannot multiply Gaussians of size {a.dim} and {b.dim}")
    return canonical(a.precision + b.precision, a.shift + b.shift)


def affine_propagate(g: GaussianMoment, A, b, C) -> GaussianMoment:
    """Push ``g`` through ``x2 = A x1 + b + noise``, ``noise ~ N(0, C)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    m, n = A.shape
    if n != g.dim:
        raise DimensionMismatch(f"A has {n} columns but the Gaussian has size {g.dim}")
    if b.shape != (m,):
        raise DimensionMismatch(f"b has shape {b.shape}, expected {(m,)}")
    _check_square(C, m, "C")
    return moment(A @ g.mean + b, C + A @ g.cov @ A.T)


def log_overlap_weight(a: GaussianMoment, b: GaussianMoment, *, dim_det_exponent=False) -> float:
    """Log of ``det(Ca + Cb)^(-1/2) * exp(-0.5 * d^T (Ca + Cb)^-1 d)``, ``d = ma - mb``.

    This is the integral of ``N(x; a) N(x; b)`` without its ``(2 pi)^(-n/2)``
    factor.  The exponent equals ``0.5 * (m^T W m - ma^T Wa ma - mb^T Wb mb)``
    with ``W = Wa + Wb``; the difference form used here avoids the
    cancellation between those three terms.  ``dim_det_exponent=True``
    raises the determinant to ``-n/2`` instead, which only differs for n > 1.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"cannot overlap Gaussians of size {a.dim} and {b.dim}")
    s = a.cov + b.cov
    cond = np.linalg.cond(s)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMatrix(f"Ca + Cb is singular (cond={cond:.3e})")
    d = a.mean - b.mean
    _, logdet = np.linalg.slogdet(s)
    exponent = -0.5 * a.dim if dim_det_exponent else -0.5
    return exponent * logdet - 0.5 * float(d @ np.linalg.solve(s, d))


def overlap_weight(a: GaussianMoment, b: GaussianMoment, *, dim_det_exponent=False) -> float:
    """Constant message of a Gaussian factor fed by a Gaussian message; 0 on underflow."""
    return math.exp(log_overlap_weight(a, b, dim_det_exponent=dim_det_exponent))


def _as_slice(index_range, n):
    if isinstance(index_range, slice):
        start, stop, step = index_range.start, index_range.stop, index_range.step
        start = 0 if start is None else start
        stop = n if stop is None else stop
        if step not in (None, 1):
            raise IndexOutOfRange("only contiguous index ranges are supported")
    elif isinstance(index_range, range):
        if index_range.step != 1:
            raise IndexOutOfRange("only contiguous index ranges are supported")
        start, stop = index_range.start, index_range.stop
    else:
        start, stop = index_range
    if not 0 <= start < stop <= n:
        raise IndexOutOfRange(f"range [{start}, {stop}) is outside [0, {n})")
    return slice(start, stop)


def marginal_block(g: GaussianMoment, index_range) -> GaussianMoment:
    """Marginal over a contiguous block of coordinates.

    ``index_range`` is a ``slice``, a unit-step ``range`` or a ``(start, stop)`` pair.
    """
    s = _as_slice(index_range, g.dim)
    return _trusted(GaussianMoment, mean=g.mean[s], cov=g.cov[s, s])


def mixture_moments(points, means, covs, weights=None) -> GaussianMoment:
    """Mean and covariance of ``sum_j w_j N(x_L; means_j, covs_j) delta(x_N - points_j)``.

    The result is over the stacked vector ``[x_L, x_N]``.  ``covs`` may be a
    single ``(d_l, d_l)`` matrix shared by all components.  Weights default
    to uniform and are normalized internally.
    """
    points = np.asarray(points, dtype=float)
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    n = means.shape[0]
    if n == 0:
        raise EmptyInput("mixture has no components")
    if points.shape[0] != n or (covs.ndim == 3 and covs.shape[0] != n):
        raise DimensionMismatch("points, means and covs must have the same length")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise DimensionMismatch(f"weights have shape {w.shape}, expected {(n,)}")
        total = w.sum()
        if not total > 0:
            raise ZeroTotalWeight("mixture weights sum to zero")
        w = w / total
    mean_l = w @ means
    mean_n = w @ points
    dl_ = means - mean_l
    dn_ = points - mean_n
    spread = covs if covs.ndim == 2 else np.einsum("j,jab->ab", w, covs)
    cov_ll = spread + (dl_.T * w) @ dl_
    cov_nn = (dn_.T * w) @ dn_
    cov_ln = (dl_.T * w) @ dn_
    cov = np.block([[cov_ll, cov_ln], [cov_ln.T, cov_nn]])
    return moment(np.concatenate([mean_l, mean_n]), cov)


def moment_match(pairs: Sequence[WeightedGaussianPair]) -> GaussianMoment:
    """Single Gaussian preserving the first two moments of a list of pairs."""
    if len(pairs) == 0:
        raise EmptyInput("moment_match needs at least one pair")
    points = np.stack([p.point for p in pairs])
    means = np.stack([p.gaussian.mean for p in pairs])
    covs = np.stack([p.gaussian.cov for p in pairs])
    weights = np.array([p.weight for p in pairs])
    return mixture_moments(points, means, covs, weights)


def psd_factor(cov):
    """Return ``L`` with ``L @ L.T == cov`` for a (stack of) PSD matrix.

    Uses a symmetric eigendecomposition; eigenvalues in ``[-1e-10 * scale, 0)``
    are clamped to zero, anything more negative raises :class:`NotPsd`.
    """
    cov = symmetrize(cov)
    lam, vec = np.linalg.eigh(cov)
    scale = np.abs(np.trace(cov, axis1=-2, axis2=-1))
    floor = -PSD_RTOL * np.maximum(scale, np.abs(cov).max(axis=(-2, -1), initial=0.0))
    if np.any(lam < floor[..., None]):
        raise NotPsd("covariance is not positive semidefinite")
    return vec * np.sqrt(np.clip(lam, 0.0, None))[..., None, :]


def sample(g: GaussianMoment, rng: np.random.Generator, size=None):
    """Draw from ``g``; ``size=None`` returns one vector, otherwise ``(size, n)``."""
    factor = psd_factor(g.cov)
    if size is None:
        return g.mean + factor @ rng.standard_normal(g.dim)
    z = rng.standard_normal((size, g.dim))
    return g.mean + z @ factor.T


def sample_batch(means, covs, rng: np.random.Generator):
    """One draw per row: ``means`` is ``(n, d)``, ``covs`` is ``(n, d, d)`` or a shared ``(d, d)``.

    Row ``j`` consumes the ``j``-th standard-normal vector of the stream.
    """
    means = np.asarray(means, dtype=float)
    factor = psd_factor(covs)
    z = rng.standard_normal(means.shape)
    return means + np.einsum("...ab,...b->...a", factor, z)


def batch_log_likelihood(r, S):
    """Quadratic term ``-0.5 r^T S^-1 r`` and ``log det S`` for stacks of residuals.

    ``S`` is a stack matching ``r`` or one ``(p, p)`` matrix shared by all
    residuals.  It must be positive definite; otherwise :class:`SingularMatrix` is raised.
    """
    r = np.asarray(r, dtype=float)
    S = np.asarray(S, dtype=float)
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix("measurement covariance is not positive definite") from exc
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    if S.ndim == 2:
        # one covariance shared by every residual
        z = solve_triangular(chol, r.reshape(-1, r.shape[-1]).T, lower=True)
        quad = np.sum(z * z, axis=0).reshape(r.shape[:-1])
        return -0.5 * quad, np.broadcast_to(logdet, quad.shape)
    sol = np.linalg.solve(S, r[..., None])[..., 0]
    quad = np.einsum("...a,...a->...", r, sol)
    return -0.5 * quad, logdet
