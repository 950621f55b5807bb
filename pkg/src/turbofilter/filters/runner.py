"""Drive any of the implemented filters over a measurement sequence."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..ssm import ClgModel
from .ekf import ekf_init, ekf_step
from .mpf import mpf_init, mpf_step
from .sir import sir_init, sir_pf_step
from .turbo import BACKENDS, DiagnosticTrace, tf1_step, tf2_step, tf_init

FILTERS = ("ekf", "mpf", "tf1", "tf2", "pf")
PARTICLE_FILTERS = ("mpf", "tf1", "tf2", "pf")


@dataclass(frozen=True, eq=False)
class FilterRun:
    """Estimates ``(T, d_l)`` and ``(T, d_n)`` and the wall time of the filter loop.

    ``x_non_ekf`` holds the EKF-head estimate of ``x_N`` for the turbo filters.
    """

    x_lin: np.ndarray
    x_non: np.ndarray
    elapsed: float
    x_non_ekf: np.ndarray | None = None


def run_filter(
    name: str,
    model: ClgModel,
    measurements,
    rng: np.random.Generator,
    n_p: int = 100,
    n_it: int = 1,
    det_factors=(False, False),
    pm_exchange=True,
    trace: DiagnosticTrace | None = None,
    backend: str = "vectorized",
) -> FilterRun:
    """Run filter ``name`` over ``measurements`` (row ``i`` is time ``i + 1``).

    ``backend`` selects vectorized or per-particle loop evaluation for the
    turbo filters and the MPF.  Initialization and the recursion are timed
    with ``time.perf_counter``.
    Raises :class:`AllZeroWeights` if a particle filter degenerates.
    """
    if name not in FILTERS:
        raise ConfigError(f"unknown filter {name!r}; choose from {FILTERS}")
    if name in PARTICLE_FILTERS and n_p < 1:
        raise ConfigError(f"n_p must be >= 1 for {name}")
    if name in ("tf1", "tf2") and n_it < 1:
        raise ConfigError("n_it must be >= 1")
    if backend not in BACKENDS:
        raise ConfigError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    ys = np.asarray(measurements, dtype=float)
    t_steps = ys.shape[0]
    d_l, d_n = model.dims.d_l, model.dims.d_n
    x_lin = np.empty((t_steps, d_l))
    x_non = np.empty((t_steps, d_n))
    x_non_ekf = None
    start = time.perf_counter()
    if name == "ekf":
        state = ekf_init(model)
        for i in range(t_steps):
            state, est = ekf_step(state, model, i + 1, ys[i])
            x_lin[i], x_non[i] = est[:d_l], est[d_l:]
    elif name in ("tf1", "tf2"):
        step = tf1_step if name == "tf1" else tf2_step
        x_non_ekf = np.empty((t_steps, d_n))
        state = tf_init(model, n_p, rng, n_it)
        for i in range(t_steps):
            state, est = step(state, model, i + 1, ys[i], n_it, rng, det_factors, pm_exchange, trace, backend)
            x_lin[i], x_non[i], x_non_ekf[i] = est.x_lin, est.x_non, est.x_non_ekf
    elif name == "mpf":
        state = mpf_init(model, n_p, rng)
        for i in range(t_steps):
            state, est = mpf_step(state, model, i + 1, ys[i], rng, backend)
            x_lin[i], x_non[i] = est.x_lin, est.x_non
    else:
        points = sir_init(model, n_p, rng)
        for i in range(t_steps):
            points, est = sir_pf_step(points, model, i + 1, ys[i], rng)
            x_lin[i], x_non[i] = est[:d_l], est[d_l:]
    elapsed = time.perf_counter() - start
    return FilterRun(x_lin, x_non, elapsed, x_non_ekf)
