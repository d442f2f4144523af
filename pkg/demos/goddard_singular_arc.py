"""Goddard rocket: chattering thrust on the singular arc.

Collocation on 99 Hermite-Simpson intervals oscillates where the thrust is
interior; the alternating method started from that solution smooths it.

Run:  python3 demos/goddard_singular_arc.py      (about a minute)
"""
from dairopt.driver import AccuracyRequest, dair_solve, solve_collocation
from dairopt.problems import get_problem, goddard

case = get_problem("goddard")
dop, mesh = case.make(), case.mesh()

col = solve_collocation(dop, mesh)
rep = dair_solve(dop, mesh, AccuracyRequest.uniform(1e-8, dop.n_eq), x0=col.x)
window = goddard.singular_window(rep.trajectory)
print(f"collocation objective  {col.objective:.6f}")
print(f"alternating objective  {rep.objective:.6f}  flags {rep.flags}")
print(f"singular window        [{window[0]:.4f}, {window[1]:.4f}]")
print(f"thrust total variation collocation {goddard.thrust_tv(col.trajectory, window):.2f}, "
      f"alternating {goddard.thrust_tv(rep.trajectory, window):.2f}")
