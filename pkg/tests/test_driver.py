import json

import numpy as np
import pytest

from dairopt.driver import (MET, RELAXED, AccuracyRequest, ParetoPoint, RolloutError, applied_bounds,
                            convergence_study, dair_solve, default_pareto_grid, loglog_slope, mark_dominated,
                            pareto_sweep, represent_solution, simulate_rollout, solve_collocation)
from dairopt.mesh import build_mesh
from dairopt.problem import trajectory_from_samples
from dairopt.problems import cartpole, get_problem, lq
from dairopt.solver import SolverOptions
from dairopt.transcription import dair_cost_value, mirs_values

TOL = SolverOptions().tol


@pytest.fixture(scope="module")
def lq_setup():
    case = get_problem("lq-analytic")
    return case.make(), case.mesh()


def test_request_validation():
    with pytest.raises(ValueError):
        AccuracyRequest((1e-3, 0.0))
    with pytest.raises(ValueError):
        AccuracyRequest((np.inf,))
    assert np.array_equal(AccuracyRequest((1e-3,)).vector(3), [1e-3] * 3)
    with pytest.raises(ValueError):
        AccuracyRequest((1e-3, 1e-3)).vector(3)
    assert AccuracyRequest.uniform(1e-4, 2).mirs == (1e-4, 1e-4)


def test_applied_bounds_rules():
    applied, flags = applied_bounds([1e-3, 1e-3], np.array([1e-2, 1e-4]), early=False)
    assert np.allclose(applied, [1e-2, 1e-3]) and flags == [RELAXED, MET]
    applied, flags = applied_bounds([1e-3, 1e-3], np.array([1e-2, 1e-4]), early=True)
    assert np.allclose(applied, [1e-3, 1e-3]) and flags == [MET, MET]


def test_lq_generous_request_reaches_optimum(lq_setup):
    dop, mesh = lq_setup
    req = AccuracyRequest((1e-9,))
    rep = dair_solve(dop, mesh, req)
    assert rep.residual.status == "early-terminated"
    assert rep.flags == [MET]
    assert abs(rep.objective - lq.OPTIMAL_COST) <= 1e-4 * lq.OPTIMAL_COST
    # early termination soundness, recomputed independently
    assert np.all(mirs_values(dop, mesh, rep.residual.x) <= req.vector(1))
    assert np.all(mirs_values(dop, mesh, rep.x) <= rep.applied + 10 * TOL)
    assert rep.handoff.feasible(1e-6)


def test_unattainable_request_relaxes_every_equation(lq_setup):
    dop, mesh = lq_setup
    rep = dair_solve(dop, mesh, AccuracyRequest((1e-30,)))
    assert rep.residual.status != "early-terminated"
    assert rep.flags == [RELAXED] and rep.relaxed
    assert np.all(rep.applied >= rep.achieved)
    assert rep.handoff.feasible(1e-6)
    assert np.all(mirs_values(dop, mesh, rep.x) <= rep.applied + 10 * TOL)
    data = json.loads(rep.to_json())
    assert data["flags"] == [RELAXED] and data["method"] == "dair"


def cartpole_terminal(dop, traj):
    return cartpole.terminal_violation(simulate_rollout(dop, traj).terminal_state)


def test_cartpole_tight_request_trades_cost_for_fidelity(cartpole, cartpole_colloc):
    case, dop, mesh = cartpole
    rep = dair_solve(dop, mesh, AccuracyRequest.uniform(1e-12, 4), weights=case.weights)
    v_col = cartpole_terminal(dop, cartpole_colloc.trajectory)
    v_dair = cartpole_terminal(dop, rep.trajectory)
    assert v_dair < v_col
    assert rep.objective > cartpole_colloc.objective
    assert np.all(rep.applied >= rep.achieved)
    assert np.all(mirs_values(dop, mesh, rep.x) <= rep.applied + 10 * TOL)
    if v_dair < 1.0:
        # a small terminal violation must not hide a runaway cart
        assert np.max(np.abs(simulate_rollout(dop, rep.trajectory).states[0])) <= 10.0


def test_representation_never_worse(lq_setup, cartpole, cartpole_colloc):
    dop, mesh = lq_setup
    col = solve_collocation(dop, mesh)
    cases = ((dop, mesh, col, None), (cartpole[1], cartpole[2], cartpole_colloc, cartpole[0].weights))
    for d, m, c, w in cases:
        rep = represent_solution(d, m, c.x, weights=w)
        assert rep.method == "represent" and rep.cost is None
        J_c = dair_cost_value(d, m, c.x)
        assert rep.objective <= J_c + 10 * TOL * max(1.0, abs(J_c))
        wv = np.ones(d.n_eq) if w is None else np.asarray(w) ** 2
        assert np.sum(wv * mirs_values(d, m, rep.x)) <= np.sum(wv * mirs_values(d, m, c.x)) * (1 + 1e-12)


def test_single_point_sweep_matches_dair_solve(lq_setup):
    dop, mesh = lq_setup
    req = AccuracyRequest((1e-6,))
    points = pareto_sweep(dop, mesh, [req])
    assert [p.label for p in points].count("dair") == 1 and len(points) == 2
    rep = dair_solve(dop, mesh, req)
    dair = next(p for p in points if p.label == "dair")
    assert dair.mirns == rep.errors.mirns
    assert dair.request == req.mirs
    with pytest.raises(ValueError):
        pareto_sweep(dop, mesh, [])


def test_sweep_records_failures(lq_setup):
    dop, mesh = lq_setup

    def boom(traj):
        raise RuntimeError("metric failed")

    points = pareto_sweep(dop, mesh, [AccuracyRequest((1e-6,))], violation=boom,
                          opts=SolverOptions(max_iterations=50))
    assert len(points) == 2
    assert all(p.status == "failed" and "metric failed" in p.error for p in points)


def test_mark_dominated():
    pts = [ParetoPoint("a", 1.0, 5.0, 0, "ok"), ParetoPoint("b", 2.0, 4.0, 0, "ok"),
           ParetoPoint("c", 3.0, 4.5, 0, "ok")]
    mark_dominated(pts, 1e-8)
    assert [p.dominated for p in pts] == [False, False, True]


def test_default_grid_spans_three_decades():
    grid = default_pareto_grid([1e-6, 2e-6])
    assert len(grid) == 8
    assert np.allclose(grid[0].mirs, [1e-6, 2e-6]) and np.allclose(grid[-1].mirs, [1e-3, 2e-3])
    ratios = [b.mirs[0] / a.mirs[0] for a, b in zip(grid, grid[1:])]
    assert np.allclose(ratios, ratios[0])


def test_loglog_slope():
    K = [8, 16, 32]
    assert loglog_slope(K, [1.0 / k ** 3 for k in K]) == pytest.approx(-3.0)
    assert np.isnan(loglog_slope([8], [1.0]))


def test_lq_convergence_study_orders():
    table = convergence_study(lq.make(), "hs", [4, 8, 16], reference=lambda t: lq.optimal_state(t)[None, :])
    assert table.K == [4, 8, 16]
    assert set(table.mirns) == {"collocation", "dair"}
    for m in ("collocation", "dair"):
        assert all(s == "converged" for s in table.status[m])
        assert table.state_slopes[m] <= -2.0
    with pytest.raises(ValueError):
        convergence_study(lq.make(), "hs", [8, 4])


def test_rollout_of_exact_trajectory():
    dop = lq.make()
    mesh = build_mesh("uniform", 3, degree=2)
    t = mesh.data_times(0.0, 1.0)
    traj = trajectory_from_samples(mesh, 1 + t - t ** 2 / 2, 1 - t)
    ro = simulate_rollout(dop, traj)
    assert np.max(ro.deviation) <= 1e-8
    assert ro.terminal_state[0] == pytest.approx(1.5, abs=1e-9)


def test_rollout_rejects_dae_and_reports_blowup():
    pend = get_problem("dae-pendulum")
    dop = pend.make()
    traj = trajectory_from_samples(pend.mesh(2), np.zeros((2, 6, 4)), np.zeros((2, 6, 2)), 0.0, 2.0)
    with pytest.raises(ValueError):
        simulate_rollout(dop, traj)
    from dairopt import autodiff as ad
    from dairopt.problem import DopDefinition
    blow = DopDefinition(name="blow", n=1, m=1, t0=(0.0, 0.0), tf=(2.0, 2.0),
                         dynamics=lambda x, u, t, p: ad.stack([x[0] * x[0]]))
    mesh = build_mesh("uniform", 1, degree=1)
    traj = trajectory_from_samples(mesh, [[1.0, 1.0]], [[0.0, 0.0]], 0.0, 2.0)
    with pytest.raises(RolloutError) as info:
        simulate_rollout(blow, traj)
    assert info.value.blowup_time == pytest.approx(1.0, abs=1e-2)
