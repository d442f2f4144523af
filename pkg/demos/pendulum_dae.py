"""Index-3 Cartesian pendulum on LGR(5), 50 intervals.

Run:  python3 demos/pendulum_dae.py      (a few minutes on one core)
"""
import numpy as np

from dairopt.driver import solve_collocation, solve_residual
from dairopt.problems import get_problem, pendulum

case = get_problem("dae-pendulum")
dop, mesh = case.make(), case.mesh()

for name, run in (("residual minimization", solve_residual), ("collocation", solve_collocation)):
    rep = run(dop, mesh)
    print(f"{name:22s} status {rep.outcome.status:15s} MIRNS {rep.errors.mirns:.2e}  "
          f"max eta {np.max(rep.errors.eta):.2e}  drift {pendulum.manifold_drift(rep.trajectory):.2e}")
