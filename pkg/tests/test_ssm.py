import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear_model
from turbofilter.errors import DimensionMismatch, InvalidParams, NonDifferentiablePoint
from turbofilter.gaussian import GaussianMoment, sample
from turbofilter.ssm import (
    AgentModel,
    AgentParams,
    ClgDims,
    ClgModel,
    LinearClgModel,
    Trajectory,
    agent_model,
    compose_f,
    compose_h,
    linearize,
    particle_slots,
    simulate,
)

X0 = np.array([5.0, 8.0, 4.0, 4.0])


def fd_jacobian(fun, x, step=1e-6):
    cols = []
    for i in range(x.shape[0]):
        h = step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((fun(xp) - fun(xm)) / (2 * h))
    return np.stack(cols, axis=1)


def test_dims():
    assert ClgDims(2, 3, 1).d == 5
    for bad in [(0, 1, 1), (1, 0, 1), (1, 1, 0)]:
        with pytest.raises(InvalidParams):
            ClgDims(*bad)


def test_compose_shift_model():
    m = LinearClgModel(
        a_lin=np.zeros((1, 1)),
        a_non=np.zeros((1, 1)),
        b_meas=np.ones((1, 1)),
        cov_w_lin=[[1.0]],
        cov_w_non=[[1.0]],
        cov_e=[[1.0]],
        init=GaussianMoment(np.zeros(2), np.eye(2)),
        f_non_mat=[[1.0]],
    )
    np.testing.assert_array_equal(compose_f(m, 1, [3.0, 7.0]), [0.0, 7.0])
    with pytest.raises(DimensionMismatch):
        compose_f(m, 1, [1.0, 2.0, 3.0])


def test_agent_measurement_example(agent):
    np.testing.assert_allclose(compose_h(agent, 1, X0), [5.0, 8.0, math.sqrt(32.0)], rtol=1e-15)


def test_agent_slot_values(agent):
    np.testing.assert_allclose(agent.a_lin(1, X0[2:]), 0.985 * np.eye(2), rtol=1e-15)
    np.testing.assert_allclose(agent.a_non(1, X0[2:]), -0.3 * np.eye(2), rtol=1e-15)
    np.testing.assert_allclose(agent.cov_w_non, 1e-4 * np.eye(2), rtol=1e-12)
    np.testing.assert_allclose(agent.cov_w_lin, 1e-4 * np.eye(2), rtol=1e-12)
    np.testing.assert_allclose(agent.cov_e, np.diag([0.0025] * 3), rtol=1e-12)
    np.testing.assert_allclose(agent.f_non(1, np.array([1.0, 0.0])), [0.985, 0.0], rtol=1e-15)
    np.testing.assert_array_equal(agent.b_meas(1, X0[2:]), [[1, 0], [0, 1], [0, 0]])


def test_agent_zero_drag():
    m = agent_model(AgentParams(a0_tilde=0.0))
    v = np.array([1.5, -0.5])
    np.testing.assert_allclose(m.f_lin(1, v), 0.1 * v)
    np.testing.assert_allclose(m.f_non(1, v), 0.99 * v)


def test_agent_zero_force_limit():
    m = agent_model(AgentParams(a0=0.0, a0_tilde=0.0, rho=1.0))
    x = np.array([1.0, 2.0, 3.0, -4.0])
    np.testing.assert_allclose(compose_f(m, 1, x), [1.3, 1.6, 3.0, -4.0], rtol=1e-15)


def test_agent_params_validation():
    for kwargs in [dict(rho=0.0), dict(rho=1.5), dict(t_s=0.0), dict(sigma_p=-1.0), dict(p_init=(1.0,))]:
        with pytest.raises(InvalidParams):
            AgentParams(**kwargs)


def test_agent_position_jacobian(agent):
    F = agent.dyn_jacobian(1, X0)
    np.testing.assert_allclose(F[:2, :2], 0.985 * np.eye(2), rtol=1e-15)
    Ht = agent.meas_jacobian(1, X0)
    np.testing.assert_allclose(Ht[2, 2:], [2**-0.5, 2**-0.5], rtol=1e-14)


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    st.lists(st.floats(-8, 8), min_size=2, max_size=2).filter(lambda v: math.hypot(*v) > 1e-3),
)
def test_agent_jacobians_match_finite_differences(p, v):
    m = AgentModel()
    x = np.array(p + v)
    F = m.dyn_jacobian(1, x)
    Ht = m.meas_jacobian(1, x)
    F_fd = fd_jacobian(lambda z: compose_f(m, 1, z), x)
    H_fd = fd_jacobian(lambda z: compose_h(m, 1, z), x)
    scale_f = max(1.0, np.abs(F).max())
    assert np.abs(F - F_fd).max() <= 1e-5 * scale_f
    assert np.abs(Ht - H_fd).max() <= 1e-5 * max(1.0, np.abs(Ht).max())


def test_generic_finite_difference_jacobian_matches_analytic():
    # the base-class fallback differentiates through the slots only
    class Plain(ClgModel):
        def __init__(self, inner):
            self.inner = inner
            self.dims, self.cov_w_lin, self.cov_w_non = inner.dims, inner.cov_w_lin, inner.cov_w_non
            self.cov_e, self.init = inner.cov_e, inner.init

        def a_lin(self, l, xn):
            return self.inner.a_lin(l, xn)

        def f_lin(self, l, xn):
            return self.inner.f_lin(l, xn)

        def a_non(self, l, xn):
            return self.inner.a_non(l, xn)

        def f_non(self, l, xn):
            return self.inner.f_non(l, xn)

        def b_meas(self, l, xn):
            return self.inner.b_meas(l, xn)

        def g_meas(self, l, xn):
            return self.inner.g_meas(l, xn)

    a = AgentModel()
    m = Plain(a)
    x = np.array([0.3, -1.2, 2.5, 0.7])
    np.testing.assert_allclose(m.dyn_jacobian(1, x), a.dyn_jacobian(1, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(m.meas_jacobian(1, x), a.meas_jacobian(1, x), rtol=1e-6, atol=1e-8)


def test_linearization_identities(agent, rng):
    for _ in range(20):
        x_fe, x_fp = rng.standard_normal(4) * 3, rng.standard_normal(4) * 3
        lin = linearize(agent, 1, x_fe, x_fp)
        np.testing.assert_allclose(lin.f_mat @ x_fe + lin.u_vec, compose_f(agent, 1, x_fe), rtol=1e-13, atol=1e-13)
        np.testing.assert_allclose(lin.ht_mat @ x_fp + lin.v_vec, compose_h(agent, 1, x_fp), rtol=1e-13, atol=1e-13)
        np.testing.assert_array_equal(lin.h_mat, lin.ht_mat.T)


def test_linear_model_linearization(rng):
    m = linear_model(rng)
    lin = linearize(m, 1, rng.standard_normal(4), rng.standard_normal(4))
    np.testing.assert_allclose(lin.f_mat, m.full_f)
    np.testing.assert_allclose(lin.u_vec, m.full_u, atol=1e-14)
    lin0 = linearize(
        LinearClgModel.from_matrices(m.full_f, np.zeros(4), m.full_ht, np.zeros(3), m.cov_w_lin, m.cov_w_non, m.cov_e, m.init, 2),
        1,
        rng.standard_normal(4),
        rng.standard_normal(4),
    )
    np.testing.assert_allclose(lin0.u_vec, 0.0, atol=1e-14)


def test_zero_speed_handling():
    x = np.array([1.0, 1.0, 0.0, 0.0])
    m = AgentModel()
    np.testing.assert_array_equal(m.meas_jacobian(1, x)[2], 0.0)
    np.testing.assert_allclose(compose_f(m, 1, x), [0.985, 0.985, -0.3, -0.3])
    with pytest.raises(NonDifferentiablePoint):
        AgentModel(strict=True).meas_jacobian(1, x)


def test_batched_slots(agent, rng):
    pts = rng.standard_normal((5, 2))
    s = particle_slots(agent, 1, pts)
    assert s.a_lin.shape == (2, 2)
    assert s.f_lin.shape == (5, 2)
    assert s.g_meas.shape == (5, 3)
    for j in range(5):
        np.testing.assert_allclose(s.f_non[j], agent.f_non(1, pts[j]))
        np.testing.assert_allclose(s.g_meas[j], agent.g_meas(1, pts[j]))
    xs = np.hstack([rng.standard_normal((5, 2)), pts])
    batched = compose_f(agent, 1, xs)
    for j in range(5):
        np.testing.assert_allclose(batched[j], compose_f(agent, 1, xs[j]))


def test_simulation_equivalence_with_raw_equations():
    pr = AgentParams()
    m = AgentModel(pr)
    rng_a, rng_b = np.random.default_rng(11), np.random.default_rng(11)
    traj = simulate(m, 200, rng=rng_a)
    # raw position/velocity recursions driven by the same draws
    p = np.empty((200, 2))
    v = np.empty((200, 2))
    x0 = sample(m.init, rng_b)
    p[0], v[0] = x0[:2], x0[2:]
    rng_b.standard_normal(3)
    for i in range(1, 200):
        w = rng_b.standard_normal(4)
        pp, vv = p[i - 1], v[i - 1]
        speed = np.linalg.norm(vv)
        acc = -(pr.a0 / pr.d0) * pp - pr.a0_tilde * (speed / pr.v0) ** 3 * vv / speed
        p[i] = pp + vv * pr.t_s + 0.5 * acc * pr.t_s**2 + pr.sigma_p * w[:2]
        v[i] = pr.rho * vv + acc * pr.t_s + (1 - pr.rho) * w[2:]
        rng_b.standard_normal(3)
    np.testing.assert_allclose(traj.states[:, :2], p, rtol=0, atol=1e-12)
    np.testing.assert_allclose(traj.states[:, 2:], v, rtol=0, atol=1e-12)


def test_simulate_noise_free_linear(rng):
    m = linear_model(rng)
    m.cov_w_lin = np.zeros((2, 2))
    m.cov_w_non = np.zeros((2, 2))
    m.cov_e = np.zeros((3, 3))
    m.init = GaussianMoment(np.ones(4), np.zeros((4, 4)))
    traj = simulate(m, 10, seed=0)
    x = np.ones(4)
    for i in range(10):
        np.testing.assert_allclose(traj.states[i], x, rtol=1e-14)
        np.testing.assert_allclose(traj.measurements[i], m.full_ht @ x + m.full_v, rtol=1e-14)
        x = m.full_f @ x + m.full_u


def test_simulate_deterministic(agent):
    a, b = simulate(agent, 50, seed=3), simulate(agent, 50, seed=3)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.measurements, b.measurements)
    with pytest.raises(InvalidParams):
        simulate(agent, 0, seed=0)


def test_benchmark_trajectories_bounded(agent):
    for seed in range(20):
        traj = simulate(agent, 300, seed=seed)
        assert np.linalg.norm(traj.states[:, :2], axis=1).max() < 100.0


def test_trajectory_csv_roundtrip(agent, tmp_path):
    traj = simulate(agent, 25, seed=9)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "l,x_0,x_1,x_2,x_3,y_0,y_1,y_2"
    back = Trajectory.from_csv(path, seed=9)
    np.testing.assert_array_equal(back.states, traj.states)
    np.testing.assert_array_equal(back.measurements, traj.measurements)
    assert len(back) == 25
