"""Scalar LQ regulator: both methods against the closed-form optimum tanh(1).

Run:  python3 demos/lq_convergence.py
"""
import numpy as np

from dairopt.driver import AccuracyRequest, convergence_study, dair_solve, solve_collocation
from dairopt.problems import get_problem, lq

case = get_problem("lq-analytic")
dop = case.make()
mesh = case.mesh(16)

col = solve_collocation(dop, mesh)
rep = dair_solve(dop, mesh, AccuracyRequest((1e-9,)))
print(f"exact optimum        {lq.OPTIMAL_COST:.10f}")
print(f"collocation, K=16    {col.objective:.10f}  ({col.outcome.status})")
print(f"alternating, K=16    {rep.objective:.10f}  flags {rep.flags}")

# For xdot = u the Hermite-Simpson residual of a collocation solution vanishes,
# so the state error is the useful measure of order here.
table = convergence_study(dop, "hs", [4, 8, 16, 32], reference=lambda t: np.atleast_2d(lq.optimal_state(t)))
print("\n  K   state error (collocation)   state error (residual min.)")
for i, K in enumerate(table.K):
    print(f"{K:3d}   {table.state_error['collocation'][i]:.3e}                   "
          f"{table.state_error['dair'][i]:.3e}")
print(f"log-log slopes: {table.state_slopes['collocation']:.2f}, {table.state_slopes['dair']:.2f}")
