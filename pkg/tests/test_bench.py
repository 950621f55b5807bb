import csv
import io
import json
import subprocess
import sys
import time

import numpy as np
import pytest

import turbofilter.bench as bench
from turbofilter.bench import (
    REPORT_FIELDS,
    RunConfig,
    RunReport,
    compute_rmse,
    emit_report,
    format_report,
    main,
    measure_execution_time,
    read_report,
    run_monte_carlo,
    run_streams,
)
from turbofilter.errors import AllZeroWeights, ConfigError, EmptyInput
from turbofilter.filters import run_filter
from turbofilter.gaussian import GaussianMoment
from turbofilter.ssm import LinearClgModel, simulate

TIMING = {"et_total_s", "et_per_step_s"}


def small(**kwargs):
    base = dict(filter="tf1", n_p=20, t_steps=15, n_runs=2, base_seed=4)
    base.update(kwargs)
    return RunConfig(**base)


def rmse_rows(text):
    return [{k: v for k, v in row.items() if k not in TIMING} for row in csv.DictReader(io.StringIO(text))]


# RMSE and timing


def test_rmse_examples():
    assert compute_rmse([np.zeros((4, 2))], [np.zeros((4, 2))]) == (0.0, 0.0)
    assert compute_rmse([np.array([[3.0, 4.0]])], [np.array([[0.0, 0.0]])]) == (5.0, 0.0)
    assert compute_rmse([np.array([[1.0, 0.0], [0.0, 1.0]])], [np.zeros((2, 2))])[0] == pytest.approx(1.0)
    # pooled over runs of different lengths
    r_l, _ = compute_rmse([np.array([[2.0]]), np.array([[0.0], [0.0], [0.0]])], [np.zeros((1, 1))])
    assert r_l == pytest.approx(1.0)
    with pytest.raises(EmptyInput):
        compute_rmse([], [])


def test_measure_execution_time():
    calls = []
    et = measure_execution_time(lambda d: calls.append(d), [1, 2, 3])
    assert 0 <= et < 1e-3
    assert calls == [1, 1, 2, 3]
    assert measure_execution_time(lambda d: time.sleep(d), [0.01, 0.03, 0.02], warmup=False) >= 0.02
    with pytest.raises(EmptyInput):
        measure_execution_time(lambda d: None, [])


def test_zero_noise_linear_model_is_tracked_exactly(rng):
    tiny = 1e-20
    m = LinearClgModel.from_matrices(
        np.array([[0.9, 0.2], [-0.1, 0.95]]),
        np.array([0.1, 0.0]),
        np.eye(2),
        np.zeros(2),
        cov_w_lin=[[tiny]],
        cov_w_non=[[tiny]],
        cov_e=np.eye(2),
        init=GaussianMoment([1.0, -1.0], tiny * np.eye(2)),
        d_l=1,
    )
    traj = simulate(m, 50, seed=0)
    run = run_filter("ekf", m, traj.measurements, rng)
    r_l, r_n = compute_rmse([run.x_lin - traj.states[:, :1]], [run.x_non - traj.states[:, 1:]])
    assert r_l < 1e-8 and r_n < 1e-8


def test_run_streams_are_independent_of_order():
    a_sim, a_filt = run_streams(3, 5)
    b_sim, b_filt = run_streams(3, 5)
    assert a_sim.random() == b_sim.random()
    assert a_filt.random() == b_filt.random()
    assert run_streams(3, 5)[0].random() != run_streams(3, 6)[0].random()


# configuration


def test_config_validation():
    for kwargs in [
        dict(filter="ukf"),
        dict(n_runs=0),
        dict(t_steps=0),
        dict(n_p=0),
        dict(n_it=0),
        dict(base_seed=-1),
        dict(format="xml"),
        dict(backend="gpu"),
        dict(det_factors=(True,)),
    ]:
        with pytest.raises(ConfigError):
            RunConfig(**kwargs)
    assert RunConfig(filter="ekf", n_p=0).n_p == 0
    assert RunConfig(det_factors=True).det_factors == (True, True)


def test_config_from_dict():
    c = RunConfig.from_dict({"filter": "mpf", "n_p": 7, "rho": 0.95, "params": {"t_s": 0.2}})
    assert c.filter == "mpf" and c.n_p == 7
    assert c.params.rho == 0.95 and c.params.t_s == 0.2
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"rho": 2.0})


# Monte Carlo


def test_monte_carlo_deterministic():
    a, b = run_monte_carlo(small()), run_monte_carlo(small())
    assert (a.rmse_l, a.rmse_n) == (b.rmse_l, b.rmse_n)
    assert a.n_aborted == 0
    assert np.isfinite(a.rmse_l) and a.rmse_l >= 0
    assert a.et_per_step_s == pytest.approx(a.et_total_s / 15)


def test_monte_carlo_backends_agree():
    a = run_monte_carlo(small(filter="mpf", backend="loop"))
    b = run_monte_carlo(small(filter="mpf", backend="vectorized"))
    assert a.rmse_l == pytest.approx(b.rmse_l, rel=1e-9)
    assert a.rmse_n == pytest.approx(b.rmse_n, rel=1e-9)


def test_monte_carlo_worker_invariance():
    a = run_monte_carlo(small(n_runs=3), workers=1)
    b = run_monte_carlo(small(n_runs=3), workers=2)
    assert (a.rmse_l, a.rmse_n) == (b.rmse_l, b.rmse_n)


def test_monte_carlo_counts_aborted_runs(monkeypatch):
    real = bench.run_filter
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        # warm-up is call 1; abort the first timed run
        if calls["n"] == 2:
            raise AllZeroWeights(step=3)
        return real(*args, **kwargs)

    monkeypatch.setattr(bench, "run_filter", flaky)
    rep = run_monte_carlo(small(n_runs=3))
    assert rep.n_aborted == 1
    assert np.isfinite(rep.rmse_l)


def test_monte_carlo_all_aborted(monkeypatch):
    def dead(*args, **kwargs):
        raise AllZeroWeights()

    monkeypatch.setattr(bench, "run_filter", dead)
    rep = run_monte_carlo(small())
    assert rep.n_aborted == 2
    assert np.isnan(rep.rmse_l) and np.isnan(rep.rmse_n)


# reports


def _report(**kwargs):
    base = dict(
        filter="tf1", n_p=10, n_it=1, t_steps=5, n_runs=2, base_seed=0, rmse_l=0.1, rmse_n=0.2,
        et_total_s=0.5, et_per_step_s=0.1, n_aborted=0,
    )
    base.update(kwargs)
    return RunReport(**base)


def test_emit_empty_report(tmp_path):
    path = tmp_path / "r.csv"
    emit_report([], path)
    assert path.read_text() == ",".join(REPORT_FIELDS) + "\n"


def test_emit_roundtrip(tmp_path):
    path = tmp_path / "r.csv"
    emit_report([_report(rmse_l=0.1 + 1e-17)], path)
    text = path.read_text()
    assert text.endswith("\n") and len(text.splitlines()) == 2
    row = read_report(path)[0]
    assert list(row) == list(REPORT_FIELDS)
    assert float(row["rmse_l"]) == 0.1 + 1e-17
    jpath = tmp_path / "r.json"
    emit_report([_report()], jpath, "json")
    assert jpath.read_text().endswith("\n")
    data = read_report(jpath, "json")
    assert list(data[0]) == list(REPORT_FIELDS)
    with pytest.raises(ConfigError):
        format_report([], "xml")


def test_emit_to_stdout(capsys):
    emit_report([_report()])
    assert capsys.readouterr().out.startswith("filter,n_p")


# CLI


def test_cli_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(
        ["--filter", "ekf,mpf,tf1,tf2", "--sweep-np", "10,25,50,100,150", "--steps", "3", "--runs", "1", "--out", str(out)]
    )
    assert code == 0
    rows = read_report(out)
    assert len(rows) == 20
    assert {r["filter"] for r in rows} == {"ekf", "mpf", "tf1", "tf2"}
    assert sorted({int(r["n_p"]) for r in rows}) == [10, 25, 50, 100, 150]


def test_cli_is_deterministic_apart_from_timing(tmp_path):
    args = ["--filter", "tf2", "--np", "15", "--steps", "10", "--runs", "2", "--seed", "9"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert rmse_rows(a.read_text()) == rmse_rows(b.read_text())


def test_cli_config_file_and_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"filter": "ekf", "t_steps": 4, "n_runs": 3, "format": "json", "rho": 0.98}))
    out = tmp_path / "r.json"
    assert main(["--config", str(cfg), "--runs", "1", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data[0]["filter"] == "ekf" and data[0]["n_runs"] == 1 and data[0]["t_steps"] == 4


@pytest.mark.parametrize(
    "args",
    [
        ["--filter", "ukf"],
        ["--np", "0"],
        ["--runs", "0"],
        ["--sweep-np", "10,x"],
        ["--workers", "0"],
        ["--config", "/nonexistent/cfg.json"],
    ],
)
def test_cli_config_errors(args, capsys):
    assert main(args + ["--steps", "2", "--runs", "1"] if "--runs" not in args else args + ["--steps", "2"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_all_aborted(monkeypatch, tmp_path):
    def dead(*args, **kwargs):
        raise AllZeroWeights()

    monkeypatch.setattr(bench, "run_filter", dead)
    assert main(["--filter", "tf1", "--steps", "2", "--runs", "2", "--out", str(tmp_path / "r.csv")]) == 3


def test_console_entry_points(tmp_path):
    out = tmp_path / "r.csv"
    res = subprocess.run(
        [sys.executable, "-m", "turbofilter", "--filter", "ekf", "--steps", "3", "--runs", "1", "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    assert read_report(out)[0]["filter"] == "ekf"
    res = subprocess.run([sys.executable, "-m", "turbofilter", "--format", "yaml"], capture_output=True, text=True)
    assert res.returncode == 2
