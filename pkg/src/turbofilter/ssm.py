"""Conditionally linear Gaussian (CLG) state-space models.

The state is ``x = [x_L, x_N]`` and evolves as::

    x_L' = A_L(x_N) x_L + f_L(x_N) + w_L,    w_L ~ N(0, C_wL)
    x_N' = A_N(x_N) x_L + f_N(x_N) + w_N,    w_N ~ N(0, C_wN)
    y    = B(x_N) x_L + g(x_N) + e,          e   ~ N(0, C_e)

Model slots are evaluated on batches: ``xn`` has shape ``(..., d_n)`` and a
slot returns arrays with the same leading axes, which is what lets the
particle filters evaluate every particle in one call.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.linalg import block_diag

from .errors import DimensionMismatch, InvalidParams, NonDifferentiablePoint
from .gaussian import GaussianMoment, check_psd, psd_factor, safe_inv, sample, symmetrize

V_EPS = 1e-9


@dataclass(frozen=True)
class ClgDims:
    d_l: int
    d_n: int
    p: int

    def __post_init__(self):
        if min(self.d_l, self.d_n, self.p) < 1:
            raise InvalidParams(f"all dimensions must be >= 1, got {self}")

    @property
    def d(self) -> int:
        return self.d_l + self.d_n


class Slots(NamedTuple):
    a_lin: np.ndarray
    f_lin: np.ndarray
    a_non: np.ndarray
    f_non: np.ndarray
    b_meas: np.ndarray
    g_meas: np.ndarray


class ClgModel:
    """Base class for CLG models.

    Subclasses set ``dims``, ``cov_w_lin``, ``cov_w_non``, ``cov_e`` and
    ``init`` and implement the six slot methods.  The Jacobian methods fall
    back to central finite differences with respect to ``x_N``; override
    them when analytic derivatives are available.
    """

    dims: ClgDims
    cov_w_lin: np.ndarray
    cov_w_non: np.ndarray
    cov_e: np.ndarray
    init: GaussianMoment
    # True when A_L, A_N and B do not depend on x_N; filters then keep a
    # single copy of each instead of one per particle
    constant_matrices: bool = False

    def a_lin(self, l, xn):
        raise NotImplementedError

    def f_lin(self, l, xn):
        raise NotImplementedError

    def a_non(self, l, xn):
        raise NotImplementedError

    def f_non(self, l, xn):
        raise NotImplementedError

    def b_meas(self, l, xn):
        raise NotImplementedError

    def g_meas(self, l, xn):
        raise NotImplementedError

    def slots(self, l, xn) -> Slots:
        return Slots(
            self.a_lin(l, xn),
            self.f_lin(l, xn),
            self.a_non(l, xn),
            self.f_non(l, xn),
            self.b_meas(l, xn),
            self.g_meas(l, xn),
        )

    @cached_property
    def cov_w(self) -> np.ndarray:
        return block_diag(self.cov_w_lin, self.cov_w_non)

    @cached_property
    def prec_e(self) -> np.ndarray:
        return safe_inv(self.cov_e, "C_e")

    @cached_property
    def prec_w_lin(self) -> np.ndarray:
        return safe_inv(self.cov_w_lin, "C_wL")

    @cached_property
    def prec_w_non(self) -> np.ndarray:
        return safe_inv(self.cov_w_non, "C_wN")

    def validate(self):
        """Check covariance shapes and PSD-ness against ``dims``."""
        d = self.dims
        for name, cov, n in (
            ("cov_w_lin", self.cov_w_lin, d.d_l),
            ("cov_w_non", self.cov_w_non, d.d_n),
            ("cov_e", self.cov_e, d.p),
        ):
            cov = np.asarray(cov, dtype=float)
            if cov.shape != (n, n):
                raise DimensionMismatch(f"{name} has shape {cov.shape}, expected {(n, n)}")
            if np.abs(cov - cov.T).max(initial=0.0) > 1e-12 * np.abs(cov).max(initial=1.0):
                raise InvalidParams(f"{name} is not symmetric")
            check_psd(cov, name)
        if self.init.dim != d.d:
            raise DimensionMismatch(f"init has size {self.init.dim}, expected {d.d}")

    def _fd_columns(self, fun, l, x, step=1e-6):
        d_l = self.dims.d_l
        xn = x[d_l:]
        cols = []
        for i in range(xn.shape[0]):
            h = step * max(1.0, abs(xn[i]))
            xp, xm = x.copy(), x.copy()
            xp[d_l + i] += h
            xm[d_l + i] -= h
            cols.append((fun(self, l, xp) - fun(self, l, xm)) / (2.0 * h))
        return np.stack(cols, axis=-1)

    def dyn_jacobian(self, l, x) -> np.ndarray:
        """``d f(x) / d x`` for the stacked dynamics, shape ``(d, d)``."""
        x = np.asarray(x, dtype=float)
        xn = x[self.dims.d_l :]
        left = np.vstack([self.a_lin(l, xn), self.a_non(l, xn)])
        return np.hstack([left, self._fd_columns(compose_f, l, x)])

    def meas_jacobian(self, l, x) -> np.ndarray:
        """``d h(x) / d x``, shape ``(p, d)``."""
        x = np.asarray(x, dtype=float)
        xn = x[self.dims.d_l :]
        return np.hstack([self.b_meas(l, xn), self._fd_columns(compose_h, l, x)])


def particle_matrix(model: ClgModel, name: str, l, points) -> np.ndarray:
    """Matrix slot ``name`` (``a_lin``, ``a_non`` or ``b_meas``) for particles ``(n, d_n)``.

    When ``model.constant_matrices`` is set a single 2-D matrix shared by
    every particle is returned; otherwise one matrix per particle.
    """
    fn = getattr(model, name)
    if model.constant_matrices:
        return np.asarray(fn(l, points[0]))
    return fn(l, points)


def particle_slots(model: ClgModel, l, points) -> Slots:
    """All slots for a particle array, with shared matrices as in :func:`particle_matrix`."""
    points = np.asarray(points, dtype=float)
    s = model.slots(l, points)
    if model.constant_matrices:
        return s._replace(a_lin=s.a_lin[0], a_non=s.a_non[0], b_meas=s.b_meas[0])
    return s


def _matvec(m, v):
    return np.einsum("...ab,...b->...a", m, v)


def _check_state(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dims.d:
        raise DimensionMismatch(f"state has size {x.shape[-1]}, expected {model.dims.d}")
    return x


def compose_f(model: ClgModel, l, x) -> np.ndarray:
    """Noise-free stacked dynamics ``f_l(x)``; ``x`` may carry leading batch axes."""
    x = _check_state(model, x)
    d_l = model.dims.d_l
    xl, xn = x[..., :d_l], x[..., d_l:]
    s = model.slots(l, xn)
    return np.concatenate(
        [_matvec(s.a_lin, xl) + s.f_lin, _matvec(s.a_non, xl) + s.f_non], axis=-1
    )


def compose_h(model: ClgModel, l, x) -> np.ndarray:
    """Noise-free measurement function ``h_l(x) = g(x_N) + B(x_N) x_L``."""
    x = _check_state(model, x)
    d_l = model.dims.d_l
    xl, xn = x[..., :d_l], x[..., d_l:]
    return model.g_meas(l, xn) + _matvec(model.b_meas(l, xn), xl)


@dataclass(frozen=True, eq=False)
class Linearization:
    """First-order expansion ``f(x) ~ F x + u`` and ``h(x) ~ H^T x + v``.

    ``ht_mat`` holds ``H^T`` (shape ``(p, d)``); ``h_mat`` is its transpose.
    """

    f_mat: np.ndarray
    u_vec: np.ndarray
    ht_mat: np.ndarray
    v_vec: np.ndarray

    @property
    def h_mat(self) -> np.ndarray:
        return self.ht_mat.T


def linearize_dynamics(model: ClgModel, l, x_fe):
    x_fe = _check_state(model, x_fe)
    F = model.dyn_jacobian(l, x_fe)
    return F, compose_f(model, l, x_fe) - F @ x_fe


def linearize_measurement(model: ClgModel, l, x_fp):
    x_fp = _check_state(model, x_fp)
    Ht = model.meas_jacobian(l, x_fp)
    return Ht, compose_h(model, l, x_fp) - Ht @ x_fp


def linearize(model: ClgModel, l, x_fe, x_fp) -> Linearization:
    """Dynamics linearized at ``x_fe``, measurement linearized at ``x_fp``."""
    F, u = linearize_dynamics(model, l, x_fe)
    Ht, v = linearize_measurement(model, l, x_fp)
    return Linearization(F, u, Ht, v)


class LinearClgModel(ClgModel):
    """CLG model whose slots are constant or affine in ``x_N``.

    ``f_L(x_N) = f_lin_mat @ x_N + f_lin_off`` and likewise for ``f_N`` and
    ``g``; the A and B matrices are constant.  The stacked model is then
    fully linear, which makes it the reference case for Kalman-filter oracles.
    """

    def __init__(
        self,
        a_lin,
        a_non,
        b_meas,
        cov_w_lin,
        cov_w_non,
        cov_e,
        init: GaussianMoment,
        f_lin_mat=None,
        f_non_mat=None,
        g_meas_mat=None,
        f_lin_off=None,
        f_non_off=None,
        g_meas_off=None,
    ):
        self._a_lin = np.atleast_2d(np.asarray(a_lin, dtype=float))
        self._a_non = np.atleast_2d(np.asarray(a_non, dtype=float))
        self._b = np.atleast_2d(np.asarray(b_meas, dtype=float))
        d_l = self._a_lin.shape[0]
        d_n = self._a_non.shape[0]
        p = self._b.shape[0]
        self.dims = ClgDims(d_l, d_n, p)

        def mat(m, rows):
            return np.zeros((rows, d_n)) if m is None else np.atleast_2d(np.asarray(m, dtype=float))

        def vec(v, n):
            return np.zeros(n) if v is None else np.atleast_1d(np.asarray(v, dtype=float))

        self._fl_mat, self._fn_mat, self._g_mat = mat(f_lin_mat, d_l), mat(f_non_mat, d_n), mat(g_meas_mat, p)
        self._fl_off, self._fn_off, self._g_off = vec(f_lin_off, d_l), vec(f_non_off, d_n), vec(g_meas_off, p)
        self.cov_w_lin = np.atleast_2d(np.asarray(cov_w_lin, dtype=float))
        self.cov_w_non = np.atleast_2d(np.asarray(cov_w_non, dtype=float))
        self.cov_e = np.atleast_2d(np.asarray(cov_e, dtype=float))
        self.init = init
        self.constant_matrices = True
        self.validate()

    @classmethod
    def from_matrices(cls, F, u, Ht, v, cov_w_lin, cov_w_non, cov_e, init, d_l):
        """Split a linear model ``x' = F x + u``, ``y = Ht x + v`` at ``d_l``."""
        F, Ht = np.asarray(F, dtype=float), np.asarray(Ht, dtype=float)
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
        return cls(
            a_lin=F[:d_l, :d_l],
            a_non=F[d_l:, :d_l],
            b_meas=Ht[:, :d_l],
            cov_w_lin=cov_w_lin,
            cov_w_non=cov_w_non,
            cov_e=cov_e,
            init=init,
            f_lin_mat=F[:d_l, d_l:],
            f_non_mat=F[d_l:, d_l:],
            g_meas_mat=Ht[:, d_l:],
            f_lin_off=u[:d_l],
            f_non_off=u[d_l:],
            g_meas_off=v,
        )

    @property
    def full_f(self) -> np.ndarray:
        return np.block([[self._a_lin, self._fl_mat], [self._a_non, self._fn_mat]])

    @property
    def full_u(self) -> np.ndarray:
        return np.concatenate([self._fl_off, self._fn_off])

    @property
    def full_ht(self) -> np.ndarray:
        return np.hstack([self._b, self._g_mat])

    @property
    def full_v(self) -> np.ndarray:
        return self._g_off

    def _const(self, m, xn):
        lead = np.shape(xn)[:-1]
        return m if not lead else np.broadcast_to(m, lead + m.shape)

    def a_lin(self, l, xn):
        return self._const(self._a_lin, xn)

    def a_non(self, l, xn):
        return self._const(self._a_non, xn)

    def b_meas(self, l, xn):
        return self._const(self._b, xn)

    def f_lin(self, l, xn):
        return np.asarray(xn) @ self._fl_mat.T + self._fl_off

    def f_non(self, l, xn):
        return np.asarray(xn) @ self._fn_mat.T + self._fn_off

    def g_meas(self, l, xn):
        return np.asarray(xn) @ self._g_mat.T + self._g_off

    def dyn_jacobian(self, l, x):
        return self.full_f

    def meas_jacobian(self, l, x):
        return self.full_ht


@dataclass(frozen=True)
class AgentParams:
    """Parameters of the planar agent benchmark (SI units)."""

    rho: float = 0.99
    t_s: float = 0.1
    sigma_p: float = 0.01
    sigma_ep: float = 5e-2
    sigma_ev: float = 5e-2
    a0: float = 1.5
    d0: float = 0.5
    a0_tilde: float = 0.05
    v0: float = 1.0
    p_init: tuple = (5.0, 8.0)
    v_init: tuple = (4.0, 4.0)

    def __post_init__(self):
        # rho == 1 is accepted for the zero-force limit; it makes C_wN singular
        if not 0.0 < self.rho <= 1.0:
            raise InvalidParams(f"rho must lie in (0, 1], got {self.rho}")
        if not self.t_s > 0:
            raise InvalidParams(f"t_s must be positive, got {self.t_s}")
        for name in ("sigma_p", "sigma_ep", "sigma_ev", "d0", "v0"):
            if not getattr(self, name) > 0:
                raise InvalidParams(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("a0", "a0_tilde"):
            if not getattr(self, name) >= 0:
                raise InvalidParams(f"{name} must be nonnegative, got {getattr(self, name)}")
        for name in ("p_init", "v_init"):
            if len(getattr(self, name)) != 2:
                raise InvalidParams(f"{name} must have two components")
        object.__setattr__(self, "p_init", tuple(float(c) for c in self.p_init))
        object.__setattr__(self, "v_init", tuple(float(c) for c in self.v_init))


class AgentModel(ClgModel):
    """Agent on a plane pulled toward the origin and slowed by a cubic drag.

    ``x_L`` is the position ``p`` and ``x_N`` the velocity ``v``; the
    measurement is ``[p, |v|]``.  The drag term and the speed Jacobian row
    are set to zero for ``|v| < V_EPS`` unless ``strict=True``, in which case
    linearizing there raises :class:`NonDifferentiablePoint`.
    """

    def __init__(self, params: AgentParams = AgentParams(), init_cov=None, strict=False):
        self.params = params
        self.strict = strict
        self.dims = ClgDims(2, 2, 3)
        pr = params
        k = pr.a0 / pr.d0
        self._al = (1.0 - 0.5 * k * pr.t_s**2) * np.eye(2)
        self._an = -k * pr.t_s * np.eye(2)
        self._b = np.vstack([np.eye(2), np.zeros((1, 2))])
        # |v|^3/v0^3 * v/|v| = |v|^2 v / v0^3
        self._drag_l = 0.5 * pr.a0_tilde * pr.t_s**2 / pr.v0**3
        self._drag_n = pr.a0_tilde * pr.t_s / pr.v0**3
        self.cov_w_lin = pr.sigma_p**2 * np.eye(2)
        self.cov_w_non = (1.0 - pr.rho) ** 2 * np.eye(2)
        self.cov_e = np.diag([pr.sigma_ep**2, pr.sigma_ep**2, pr.sigma_ev**2])
        if init_cov is None:
            init_cov = np.diag([pr.sigma_ep**2, pr.sigma_ep**2, pr.sigma_ev**2, pr.sigma_ev**2])
        self.init = GaussianMoment(np.array(pr.p_init + pr.v_init), init_cov)
        self.constant_matrices = True
        self.validate()

    def _cubic(self, xn):
        xn = np.asarray(xn, dtype=float)
        sq = np.sum(xn * xn, axis=-1, keepdims=True)
        return np.where(sq < V_EPS**2, 0.0, sq * xn)

    def _const(self, m, xn):
        lead = np.shape(xn)[:-1]
        return m if not lead else np.broadcast_to(m, lead + m.shape)

    def a_lin(self, l, xn):
        return self._const(self._al, xn)

    def a_non(self, l, xn):
        return self._const(self._an, xn)

    def b_meas(self, l, xn):
        return self._const(self._b, xn)

    def f_lin(self, l, xn):
        return self.params.t_s * np.asarray(xn, dtype=float) - self._drag_l * self._cubic(xn)

    def f_non(self, l, xn):
        return self.params.rho * np.asarray(xn, dtype=float) - self._drag_n * self._cubic(xn)

    def g_meas(self, l, xn):
        xn = np.asarray(xn, dtype=float)
        speed = np.linalg.norm(xn, axis=-1, keepdims=True)
        return np.concatenate([np.zeros(xn.shape[:-1] + (2,)), speed], axis=-1)

    def slots(self, l, xn) -> Slots:
        xn = np.asarray(xn, dtype=float)
        cubic = self._cubic(xn)
        t_s, rho = self.params.t_s, self.params.rho
        return Slots(
            self.a_lin(l, xn),
            t_s * xn - self._drag_l * cubic,
            self.a_non(l, xn),
            rho * xn - self._drag_n * cubic,
            self.b_meas(l, xn),
            self.g_meas(l, xn),
        )

    def _cubic_jacobian(self, v):
        sq = v @ v
        if sq < V_EPS**2:
            return np.zeros((2, 2))
        return sq * np.eye(2) + 2.0 * np.outer(v, v)

    def dyn_jacobian(self, l, x):
        x = np.asarray(x, dtype=float)
        v = x[2:]
        dc = self._cubic_jacobian(v)
        t_s, rho = self.params.t_s, self.params.rho
        top = np.hstack([self._al, t_s * np.eye(2) - self._drag_l * dc])
        bottom = np.hstack([self._an, rho * np.eye(2) - self._drag_n * dc])
        return np.vstack([top, bottom])

    def meas_jacobian(self, l, x):
        x = np.asarray(x, dtype=float)
        v = x[2:]
        speed = np.linalg.norm(v)
        ht = np.zeros((3, 4))
        ht[:2, :2] = np.eye(2)
        if speed < V_EPS:
            if self.strict:
                raise NonDifferentiablePoint(f"|v| = {speed:.3e} is below {V_EPS}")
        else:
            ht[2, 2:] = v / speed
        return ht


def agent_model(params: AgentParams = AgentParams(), **kwargs) -> AgentModel:
    return AgentModel(params, **kwargs)


@dataclass(eq=False)
class Trajectory:
    """True states ``(T, d)`` and measurements ``(T, p)``; row ``i`` is time ``l = i + 1``."""

    states: np.ndarray
    measurements: np.ndarray
    seed: int | None = None
    d_l: int | None = field(default=None)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.measurements = np.asarray(self.measurements, dtype=float)
        if self.states.shape[0] != self.measurements.shape[0]:
            raise DimensionMismatch("states and measurements must have the same length")

    def __len__(self):
        return self.states.shape[0]

    def to_csv(self, path):
        d, p = self.states.shape[1], self.measurements.shape[1]
        header = ["l"] + [f"x_{i}" for i in range(d)] + [f"y_{i}" for i in range(p)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, (x, y) in enumerate(zip(self.states, self.measurements)):
                w.writerow([i + 1] + [repr(float(c)) for c in x] + [repr(float(c)) for c in y])

    @classmethod
    def from_csv(cls, path, seed=None) -> Trajectory:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        xi = [i for i, h in enumerate(header) if h.startswith("x_")]
        yi = [i for i, h in enumerate(header) if h.startswith("y_")]
        data = np.array([[float(c) for c in r] for r in body]).reshape(len(body), len(header))
        return cls(data[:, xi], data[:, yi], seed=seed)


def simulate(model: ClgModel, t_steps: int, seed=None, rng=None) -> Trajectory:
    """Draw ``x_1 ~ init`` and run the model forward for ``t_steps`` steps.

    Each step consumes one ``d``-vector of process noise (after the first)
    and one ``p``-vector of measurement noise from ``rng``; pass ``rng`` to
    share a stream, otherwise one is built from ``seed``.
    """
    if t_steps < 1:
        raise InvalidParams(f"t_steps must be >= 1, got {t_steps}")
    if rng is None:
        rng = np.random.default_rng(seed)
    d, p = model.dims.d, model.dims.p
    fw = psd_factor(model.cov_w)
    fe = psd_factor(symmetrize(model.cov_e))
    states = np.empty((t_steps, d))
    meas = np.empty((t_steps, p))
    x = sample(model.init, rng)
    for i in range(t_steps):
        l = i + 1
        if i > 0:
            x = compose_f(model, l - 1, x) + fw @ rng.standard_normal(d)
        states[i] = x
        meas[i] = compose_h(model, l, x) + fe @ rng.standard_normal(p)
    return Trajectory(states, meas, seed=seed, d_l=model.dims.d_l)
