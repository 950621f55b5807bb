"""
Tracking a moving agent
=======================

The agent's position is linear given its velocity, while the velocity obeys
a nonlinear drag law and the third measurement is the speed.  We simulate a
trajectory and run the EKF, the marginalized particle filter and both turbo
filters over the same measurements.
"""

import numpy as np

from turbofilter.filters import DiagnosticTrace, run_filter
from turbofilter.ssm import AgentModel, simulate

model = AgentModel()
traj = simulate(model, 300, seed=1)
print("state dims (x_L, x_N):", model.dims.d_l, model.dims.d_n)
print("first measurement", np.round(traj.measurements[0], 3))


def rmse(est, truth):
    return np.sqrt(np.mean(np.sum((est - truth) ** 2, axis=1)))


print(f"{'filter':>6} {'rmse pos':>9} {'rmse vel':>9} {'time [s]':>9}")
for name in ("ekf", "mpf", "tf1", "tf2"):
    run = run_filter(name, model, traj.measurements, np.random.default_rng(0), n_p=100)
    print(
        f"{name:>6} {rmse(run.x_lin, traj.states[:, :2]):9.4f} "
        f"{rmse(run.x_non, traj.states[:, 2:]):9.4f} {run.elapsed:9.3f}"
    )

# The turbo filters can record what happens inside each recursion: the
# entropy of the particle weights and the spread of the EKF covariance after
# the pseudo-measurement update.
trace = DiagnosticTrace()
run_filter("tf1", model, traj.measurements, np.random.default_rng(0), n_p=100, trace=trace)
rows = np.array(trace.rows)
ent = rows[:, trace.FIELDS.index("weight_entropy")]
print("weight entropy: min %.2f, median %.2f, max ln(100)=%.2f" % (ent.min(), np.median(ent), np.log(100)))
print("min eigenvalue of the EKF covariance:", rows[:, trace.FIELDS.index("c_fe2_eig_min")].min())

# Switching the exchange off turns both turbo filters into the plain EKF.
ekf = run_filter("ekf", model, traj.measurements, np.random.default_rng(0))
tf = run_filter("tf1", model, traj.measurements, np.random.default_rng(0), pm_exchange=False)
print("no exchange, max |TF1 - EKF|:", np.abs(tf.x_lin - ekf.x_lin).max())
