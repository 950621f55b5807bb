"""
Accuracy and cost against the number of particles
=================================================

A reduced version of the benchmark sweep.  The full one is

    bench --filter ekf,mpf,tf1,tf2 --sweep-np 10,25,50,100,150 --out sweep.csv

and takes several minutes.  Each configuration sees the same trajectories,
so differences between filters are not due to the data.
"""

from turbofilter.bench import RunConfig, format_report, run_monte_carlo
from turbofilter.filters import ComplexityInputs, complexity_estimate

reports = []
for n_p in (10, 50, 100):
    for name in ("mpf", "tf1"):
        reports.append(run_monte_carlo(RunConfig(filter=name, n_p=n_p, t_steps=150, n_runs=5)))
reports.append(run_monte_carlo(RunConfig(filter="ekf", t_steps=150, n_runs=5)))
print(format_report(reports))

# Rough operation counts per recursion for the same state and measurement sizes.
for n_p in (10, 50, 100):
    n_tf, n_mpf = complexity_estimate(ComplexityInputs(d=4, d_l=2, d_n=2, p=3, n_p=n_p))
    print(f"N_p={n_p:4d}  turbo {n_tf:9.0f}  marginalized PF {n_mpf:9.0f}")
