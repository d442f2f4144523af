import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dairopt import autodiff as ad
from dairopt.mesh import build_mesh, gauss_legendre
from dairopt.problem import DomainError, DopDefinition, Trajectory, evaluate_trajectory, trajectory_from_samples
from dairopt.problems import get_problem, problem_names


def _scalar_traj(mesh, chi, t0=0.0, tf=1.0):
    chi = np.asarray(chi, dtype=float)
    return trajectory_from_samples(mesh, chi, np.zeros_like(chi), t0, tf)


def test_linear_interpolant_midpoint():
    traj = _scalar_traj(build_mesh("uniform", 1, degree=1), [[0.0, 1.0]])
    x, xd, _ = evaluate_trajectory(traj, 0.5)
    assert np.isclose(x[0], 0.5) and np.isclose(xd[0], 1.0)


def test_cubic_reproduced_from_chebyshev_nodes():
    nodes = np.sort(0.5 - 0.5 * np.cos(np.pi * (2 * np.arange(4) + 1) / 8))
    traj = Trajectory(s=np.array([0.0, 1.0]), nodes=nodes, t0=0.0, tf=1.0,
                      chi=(nodes ** 3)[None, :, None], ups=np.zeros((1, 4, 1)), p=np.zeros(0))
    assert abs(evaluate_trajectory(traj, 0.3)[0][0] - 0.027) <= 1e-14


def test_breakpoint_uses_left_piece():
    # piece 1 is 0 -> 1 (slope 1); piece 2 is 1 -> 3 (slope 2)
    traj = _scalar_traj(build_mesh("uniform", 2, degree=1), [[0.0, 1.0], [1.0, 3.0]], 0.0, 2.0)
    x, xd, _ = evaluate_trajectory(traj, 1.0)
    assert x[0] == pytest.approx(1.0) and xd[0] == pytest.approx(1.0)


def test_outside_horizon_raises():
    traj = _scalar_traj(build_mesh("uniform", 1, degree=1), [[0.0, 1.0]])
    with pytest.raises(DomainError):
        evaluate_trajectory(traj, 1.5)


@settings(max_examples=25, deadline=None)
@given(degree=st.integers(1, 12), K=st.integers(1, 4), seed=st.integers(0, 10 ** 6))
def test_interpolation_exactness(degree, K, seed):
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=degree + 1)
    poly = np.polynomial.Polynomial(coef, domain=[0, 3], window=[-1, 1])
    mesh = build_mesh("lgr", K, degree=degree)
    chi = poly(mesh.data_times(0.0, 3.0))
    traj = _scalar_traj(mesh, chi, 0.0, 3.0)
    t = rng.uniform(0.0, 3.0, 100)
    x, xd, _ = traj.evaluate(t)
    scale = max(1.0, np.max(np.abs(poly(t))))
    assert np.max(np.abs(x[0] - poly(t))) <= 1e-12 * scale * degree
    h = 1e-6
    tc = np.clip(t, h, 3.0 - h)
    fd = (traj.evaluate(tc + h)[0][0] - traj.evaluate(tc - h)[0][0]) / (2 * h)
    assert np.max(np.abs(traj.evaluate(tc)[1][0] - fd)) <= 1e-6 * scale * degree ** 2


def test_continuity_at_breakpoints():
    mesh = build_mesh("hs", 5)
    rng = np.random.default_rng(0)
    vals = rng.normal(size=mesh.distinct_points())
    chi = np.stack([vals[2 * k:2 * k + 3] for k in range(5)])
    traj = _scalar_traj(mesh, chi)
    for b in traj.breakpoints[1:-1]:
        left = traj.evaluate(b - 1e-13)[0][0]
        right = traj.evaluate(b + 1e-13)[0][0]
        assert abs(left - right) <= 1e-11 * max(1.0, abs(left))


def test_registry_cartpole():
    dop = get_problem("cartpole").make()
    assert (dop.n, dop.m, dop.n_g, dop.n_c, dop.n_q) == (4, 1, 0, 0, 8)
    assert np.allclose(dop.ulb, [-20.0]) and np.allclose(dop.uub, [20.0])
    dop.check_dimensions()


def test_registry_pendulum_has_algebraic_equation():
    dop = get_problem("dae-pendulum").make()
    assert dop.n_g >= 1
    x = np.array([0.6, -0.8, 0.0, 0.0])
    g = dop.dae(x, x, np.zeros(2), 0.0, np.zeros(0))
    assert abs(g[0]) <= 1e-15
    dop.check_dimensions()


def test_registry_miss_lists_names():
    with pytest.raises(KeyError) as info:
        get_problem("unknown")
    for name in ("lq-analytic", "goddard", "dae-pendulum", "cartpole"):
        assert name in str(info.value)
    assert problem_names() == sorted(["lq-analytic", "goddard", "dae-pendulum", "cartpole"])


@pytest.mark.parametrize("name", ["lq-analytic", "goddard", "dae-pendulum", "cartpole"])
def test_callables_are_pure(name):
    dop = get_problem(name).make()
    dop.check_dimensions()
    x, u, t, p, t0, tf = dop.sample_point()
    a = np.asarray(dop.dynamics(x, u, t, p))
    b = np.asarray(dop.dynamics(x.copy(), u.copy(), t, p))
    assert a.tobytes() == b.tobytes()


def test_recommended_meshes_validate():
    for name in problem_names():
        case = get_problem(name)
        mesh = case.mesh()
        assert mesh.K == case.K


def test_invalid_definitions_rejected():
    f = lambda x, u, t, p: ad.stack([u[0]])
    with pytest.raises(ValueError):
        DopDefinition(name="bad", n=1, m=1, dynamics=f, t0=(0.0, 0.0), tf=(0.0, 0.0))
    with pytest.raises(ValueError):
        DopDefinition(name="bad", n=1, m=1, dynamics=f, t0=(0.0, 0.0), tf=(1.0, 1.0), n_q=1)
    dop = DopDefinition(name="bad", n=2, m=1, dynamics=f, t0=(0.0, 0.0), tf=(1.0, 1.0))
    with pytest.raises(ValueError):
        dop.check_dimensions()


def test_quadrature_helper_matches_numpy():
    x, w = gauss_legendre(4)
    assert np.isclose(np.sum(w * np.cos(x)), np.sin(1.0), rtol=1e-9)
