"""Monte Carlo benchmark: RMSE and execution time of the filters on the agent model.

Run ``r`` of a configuration draws its trajectory and its filter randomness
from two streams spawned from ``SeedSequence(base_seed, spawn_key=(r,))``,
so every filter sees the same trajectories and results do not depend on the
order or process in which runs execute.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import AllZeroWeights, ConfigError, EmptyInput, InvalidParams
from .filters.runner import FILTERS, PARTICLE_FILTERS, run_filter
from .filters.turbo import BACKENDS
from .ssm import AgentModel, AgentParams, simulate

REPORT_FIELDS = (
    "filter",
    "n_p",
    "n_it",
    "t_steps",
    "n_runs",
    "base_seed",
    "rmse_l",
    "rmse_n",
    "et_total_s",
    "et_per_step_s",
    "n_aborted",
)
WARMUP_STEPS = 10


@dataclass(frozen=True)
class RunConfig:
    filter: str = "tf1"
    n_p: int = 100
    n_it: int = 1
    t_steps: int = 300
    n_runs: int = 50
    base_seed: int = 0
    params: AgentParams = field(default_factory=AgentParams)
    det_factors: tuple = (False, False)
    out: str | None = None
    format: str = "csv"
    backend: str = "loop"

    def __post_init__(self):
        if self.filter not in FILTERS:
            raise ConfigError(f"unknown filter {self.filter!r}; choose from {', '.join(FILTERS)}")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if self.t_steps < 1:
            raise ConfigError("t_steps must be >= 1")
        if self.filter in PARTICLE_FILTERS and self.n_p < 1:
            raise ConfigError("n_p must be >= 1 for particle filters")
        if self.filter in ("tf1", "tf2") and self.n_it < 1:
            raise ConfigError("n_it must be >= 1 for turbo filters")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be nonnegative")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}; choose from {', '.join(BACKENDS)}")
        if isinstance(self.det_factors, bool):
            object.__setattr__(self, "det_factors", (self.det_factors, self.det_factors))
        if len(self.det_factors) != 2:
            raise ConfigError("det_factors must hold two booleans")
        object.__setattr__(self, "det_factors", tuple(bool(b) for b in self.det_factors))

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        """Build from a flat mapping; agent parameters may appear at top level."""
        names = {f.name for f in dataclasses.fields(cls)}
        param_names = {f.name for f in dataclasses.fields(AgentParams)}
        kwargs, params = {}, {}
        for key, value in data.items():
            if key in param_names:
                params[key] = value
            elif key == "params" and isinstance(value, dict):
                params.update(value)
            elif key in names:
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            kwargs["params"] = AgentParams(**params)
        except (InvalidParams, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(**kwargs)


@dataclass(frozen=True)
class RunReport:
    filter: str
    n_p: int
    n_it: int
    t_steps: int
    n_runs: int
    base_seed: int
    rmse_l: float
    rmse_n: float
    et_total_s: float
    et_per_step_s: float
    n_aborted: int
    version: str = __version__

    def row(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_FIELDS}


def run_streams(base_seed: int, r: int):
    """``(simulation rng, filter rng)`` for run ``r``."""
    sim, filt = np.random.SeedSequence(base_seed, spawn_key=(r,)).spawn(2)
    return np.random.default_rng(sim), np.random.default_rng(filt)


def compute_rmse(errors_l, errors_n):
    """Pooled RMSE over runs and steps: ``sqrt(mean_r,l |err|^2)`` for each substate.

    ``errors_l`` and ``errors_n`` are sequences of ``(T, d)`` arrays (or
    arrays shaped ``(R, T, d)``).
    """
    if len(errors_l) == 0 or len(errors_n) == 0:
        raise EmptyInput("no errors to aggregate")

    def pooled(errs):
        total, count = 0.0, 0
        for e in errs:
            e = np.atleast_2d(np.asarray(e, dtype=float))
            total += float(np.sum(e * e))
            count += e.shape[0]
        if count == 0:
            raise EmptyInput("no steps to aggregate")
        return float(np.sqrt(total / count))

    return pooled(errors_l), pooled(errors_n)


def measure_execution_time(closure, datasets, warmup=True):
    """Median wall time of ``closure(data)`` over ``datasets``.

    One discarded warm-up call on ``datasets[0]`` comes first.
    """
    datasets = list(datasets)
    if not datasets:
        raise EmptyInput("no data to time")
    if warmup:
        closure(datasets[0])
    times = []
    for data in datasets:
        t0 = time.perf_counter()
        closure(data)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _single_run(config: RunConfig, r: int):
    model = AgentModel(config.params)
    sim_rng, filt_rng = run_streams(config.base_seed, r)
    traj = simulate(model, config.t_steps, rng=sim_rng)
    try:
        res = run_filter(
            config.filter,
            model,
            traj.measurements,
            filt_rng,
            n_p=config.n_p,
            n_it=config.n_it,
            det_factors=config.det_factors,
            backend=config.backend,
        )
    except AllZeroWeights:
        return None
    d_l = model.dims.d_l
    return res.x_lin - traj.states[:, :d_l], res.x_non - traj.states[:, d_l:], res.elapsed


def _warm_up(config: RunConfig):
    model = AgentModel(config.params)
    sim_rng, filt_rng = run_streams(config.base_seed, 0)
    traj = simulate(model, min(config.t_steps, WARMUP_STEPS), rng=sim_rng)
    try:
        run_filter(
            config.filter,
            model,
            traj.measurements,
            filt_rng,
            n_p=config.n_p,
            n_it=config.n_it,
            det_factors=config.det_factors,
            backend=config.backend,
        )
    except AllZeroWeights:
        pass


def _worker(args):
    config, r = args
    return _single_run(config, r)


def run_monte_carlo(config: RunConfig, workers: int = 1) -> RunReport:
    """Run ``config.n_runs`` independent runs and aggregate them.

    Runs whose particle weights all vanish are excluded from the RMSE and
    counted in ``n_aborted``; if every run aborts the RMSE fields are NaN.
    ``et_total_s`` is the median per-run wall time of the filter loop.
    """
    _warm_up(config)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, [(config, r) for r in range(config.n_runs)]))
    else:
        results = [_single_run(config, r) for r in range(config.n_runs)]
    done = [res for res in results if res is not None]
    n_aborted = len(results) - len(done)
    if done:
        rmse_l, rmse_n = compute_rmse([d[0] for d in done], [d[1] for d in done])
        et = float(np.median([d[2] for d in done]))
    else:
        rmse_l = rmse_n = et = float("nan")
    return RunReport(
        filter=config.filter,
        n_p=config.n_p,
        n_it=config.n_it,
        t_steps=config.t_steps,
        n_runs=config.n_runs,
        base_seed=config.base_seed,
        rmse_l=rmse_l,
        rmse_n=rmse_n,
        et_total_s=et,
        et_per_step_s=et / config.t_steps,
        n_aborted=n_aborted,
    )


def format_report(reports, fmt="csv") -> str:
    rows = [r.row() for r in reports]
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if fmt != "csv":
        raise ConfigError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def emit_report(reports, path=None, fmt="csv"):
    """Write reports as CSV or JSON to ``path`` (stdout when None); returns the path."""
    text = format_report(reports, fmt)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return path


def read_report(path, fmt="csv"):
    """Parse a file written by :func:`emit_report` back into a list of dicts."""
    with open(path, newline="") as fh:
        if fmt == "json":
            return json.load(fh)
        return list(csv.DictReader(fh))


def _parse_int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bench",
        description="Monte Carlo RMSE and execution-time benchmark on the planar agent model.",
    )
    p.add_argument("--filter", help=f"one filter or a comma-separated list from {{{','.join(FILTERS)}}}")
    p.add_argument("--np", dest="n_p", type=int, help="number of particles")
    p.add_argument("--nit", dest="n_it", type=int, help="turbo iterations per step")
    p.add_argument("--steps", dest="t_steps", type=int, help="steps per run")
    p.add_argument("--runs", dest="n_runs", type=int, help="Monte Carlo runs")
    p.add_argument("--seed", dest="base_seed", type=int, help="base seed")
    p.add_argument("--sweep-np", dest="sweep_np", help="comma-separated particle counts, e.g. 10,25,50")
    p.add_argument("--det-factors", dest="det_factors", action="store_true", default=None,
                   help="keep the determinant factors in the particle weights")
    p.add_argument("--out", help="output file (stdout when omitted)")
    p.add_argument("--format", choices=("csv", "json"), help="output format")
    p.add_argument("--backend", choices=BACKENDS,
                   help="particle loop implementation; 'loop' (default) scales linearly in n_p")
    p.add_argument("--config", help="flat JSON file with RunConfig fields; flags override it")
    p.add_argument("--workers", type=int, default=1, help="worker processes for the runs")
    return p


def configs_from_args(args) -> tuple[list[RunConfig], dict]:
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    for key in ("filter", "n_p", "n_it", "t_steps", "n_runs", "base_seed", "det_factors", "out", "format", "backend", "sweep_np"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    sweep = data.pop("sweep_np", None)
    filters = data.pop("filter", "tf1")
    if isinstance(filters, str):
        filters = [f.strip() for f in filters.split(",") if f.strip()]
    if isinstance(sweep, str):
        sweep = _parse_int_list(sweep)
    n_ps = sweep if sweep else [data.get("n_p", RunConfig.n_p)]
    configs = []
    for name in filters:
        for n_p in n_ps:
            configs.append(RunConfig.from_dict({**data, "filter": name, "n_p": n_p}))
    if not configs:
        raise ConfigError("no filter selected")
    return configs, data


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configs, _ = configs_from_args(args)
        if args.workers < 1:
            raise ConfigError("workers must be >= 1")
    except (ConfigError, InvalidParams, TypeError) as exc:
        print(f"bench: config error: {exc}", file=sys.stderr)
        return 2
    reports = [run_monte_carlo(c, workers=args.workers) for c in configs]
    first = configs[0]
    emit_report(reports, first.out, first.format)
    if any(r.n_aborted == r.n_runs for r in reports):
        print("bench: every run aborted for at least one configuration", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
