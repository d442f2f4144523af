import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dairopt import autodiff as ad
from dairopt.nlp import nlp_from_functions
from dairopt.problems import get_problem
from dairopt.solver import (BackendError, SolveOutcome, SolverOptions, available_backends, register_backend,
                            solve, solve_builtin, unregister_backend)
from dairopt.transcription import build_collocation


# ----- automatic differentiation ------------------------------------------------

def test_square_derivative():
    v, d = ad.ad_evaluate(lambda z: z[0] ** 2, [3.0], [1.0])
    assert v == 9.0 and d == 6.0


def test_sine_product_gradient():
    v, d = ad.ad_evaluate(lambda z: ad.sin(z[0]) * z[1], [0.0, 2.0], np.eye(2))
    assert v == 0.0 and np.allclose(d, [2.0, 0.0])


@pytest.mark.filterwarnings("ignore:invalid value encountered in sqrt:RuntimeWarning")
def test_nan_is_reported():
    with pytest.raises(FloatingPointError):
        ad.ad_evaluate(lambda z: ad.sqrt(z[0]), [-1.0], [1.0])


def _random_poly_map(rng, n=20, m=6):
    idx = rng.integers(0, n, size=(m, 4))
    cf = rng.normal(size=(m, 4))

    def fun(z):
        return ad.stack([cf[i, 0] * z[idx[i, 0]] * z[idx[i, 1]] + cf[i, 1] * z[idx[i, 2]] ** 3
                         + cf[i, 2] * ad.exp(0.1 * z[idx[i, 3]]) + cf[i, 3] for i in range(m)])

    return fun


def test_jacobian_matches_central_differences(rng):
    fun = _random_poly_map(rng)
    x = rng.normal(size=20)
    _, J = ad.jacobian(fun, x)
    h = 1e-6
    fd = np.stack([(ad.value(fun(x + h * e)) - ad.value(fun(x - h * e))) / (2 * h) for e in np.eye(20)], axis=1)
    assert np.max(np.abs(J - fd)) <= 1e-7 * max(1.0, np.max(np.abs(J)))


def test_coloring_recovers_sparse_jacobian(rng):
    n = 12
    fun = lambda z: ad.stack([z[i] * z[i + 1] + ad.sin(z[i + 2]) for i in range(n - 2)])
    pat = np.zeros((n - 2, n), dtype=bool)
    for i in range(n - 2):
        pat[i, i:i + 3] = True
    colors = ad.color_columns(pat)
    assert colors.max() + 1 == 3
    x = rng.normal(size=n)
    _, dense = ad.jacobian(fun, x)
    _, sparse = ad.jacobian(fun, x, sparsity=pat)
    assert np.allclose(dense, sparse, atol=0)


def test_hessian_of_quadratic(rng):
    A = rng.normal(size=(5, 5))
    Q = A + A.T
    f = lambda z: 0.5 * ad.sum(z * ad.contract(Q, z))
    _, g, H = ad.hessian(f, np.ones(5))
    assert np.allclose(H, Q) and np.allclose(g, Q @ np.ones(5))


# ----- solver examples ------------------------------------------------------------

def test_active_bound_inequality():
    nlp = nlp_from_functions(1, lambda z: (z[0] - 1.0) ** 2, ineq=lambda z: ad.stack([2.0 - z[0]]),
                             n_ineq=1, x0=np.array([0.0]))
    out = solve(nlp)
    assert out.status == "converged" and out.x[0] == pytest.approx(2.0, abs=1e-8)


def test_equality_constrained_circle_point():
    nlp = nlp_from_functions(2, lambda z: z[0] ** 2 + z[1] ** 2, eq=lambda z: ad.stack([z[0] + z[1] - 1.0]),
                             n_eq=1, x0=np.array([3.0, -1.0]))
    out = solve(nlp)
    assert out.status == "converged" and np.allclose(out.x, [0.5, 0.5], atol=1e-9)


@settings(max_examples=10, deadline=None)
@given(n=st.integers(2, 10), seed=st.integers(0, 10 ** 6))
def test_equality_qp_matches_kkt_solve(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    Q = A @ A.T + np.eye(n)
    c = rng.normal(size=n)
    m = max(1, n // 3)
    B = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    nlp = nlp_from_functions(n, lambda z: 0.5 * ad.sum(z * ad.contract(Q, z)) + ad.sum(c * z),
                             eq=lambda z: ad.contract(B, z) - b, n_eq=m, x0=np.zeros(n))
    out = solve(nlp)
    K = np.block([[Q, B.T], [B, np.zeros((m, m))]])
    ref = np.linalg.solve(K, np.r_[-c, b])[:n]
    assert out.status == "converged"
    assert np.max(np.abs(out.x - ref)) <= 1e-8 * max(1.0, np.max(np.abs(ref)))


def test_variable_bounds_and_projection():
    nlp = nlp_from_functions(2, lambda z: (z[0] - 3.0) ** 2 + (z[1] + 2.0) ** 2, lb=[0.0, 0.0], ub=[1.0, 5.0],
                             x0=np.array([7.0, -4.0]))
    out = solve(nlp)
    assert np.allclose(out.x, [1.0, 0.0], atol=1e-8)


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(mu_reduction=1.0)
    with pytest.raises(ValueError):
        SolverOptions.from_dict({"tolerance": 1e-3})
    assert SolverOptions.from_dict({"tol": 1e-6}).tol == 1e-6


# ----- backends -------------------------------------------------------------------

def test_builtin_always_available():
    assert "builtin" in available_backends()
    with pytest.raises(BackendError):
        unregister_backend("builtin")


def test_register_and_select_backend():
    nlp = nlp_from_functions(2, lambda z: z[0] ** 2 + z[1] ** 2, eq=lambda z: ad.stack([z[0] + z[1] - 1.0]),
                             n_eq=1, x0=np.array([3.0, -1.0]))
    register_backend("alias-of-builtin", solve_builtin)
    try:
        with pytest.raises(BackendError):
            register_backend("alias-of-builtin", solve_builtin)
        a = solve(nlp)
        b = solve(nlp, opts=SolverOptions(backend="alias-of-builtin"))
        assert np.array_equal(a.x, b.x) and a.status == b.status
    finally:
        unregister_backend("alias-of-builtin")
    with pytest.raises(BackendError):
        solve(nlp, opts=SolverOptions(backend="no-such-solver"))


def test_two_backends_agree_on_lq():
    dop = get_problem("lq-analytic").make()
    nlp = build_collocation(dop, get_problem("lq-analytic").mesh())
    a = solve(nlp)
    b = solve(nlp, opts=SolverOptions(backend="scipy-slsqp"))
    assert a.status == "converged" and b.status == "converged"
    assert abs(a.objective - b.objective) <= 1e-6


# ----- logs, determinism, callbacks -----------------------------------------------

@pytest.fixture(scope="module")
def lq_collocation():
    case = get_problem("lq-analytic")
    return build_collocation(case.make(), case.mesh(8))


def test_merit_non_increasing_on_accepted_steps(lq_collocation):
    dop = get_problem("cartpole").make()
    nlp = build_collocation(dop, get_problem("cartpole").mesh())
    for problem in (lq_collocation, nlp):
        out = solve(problem)
        assert out.log
        for row in out.log:
            assert row["merit_after"] <= row["merit_before"]


def test_solves_are_deterministic(lq_collocation):
    a = solve(lq_collocation)
    b = solve(lq_collocation)
    assert a.log_csv() == b.log_csv()
    assert np.array_equal(a.x, b.x)


def test_log_csv_columns(lq_collocation):
    out = solve(lq_collocation)
    lines = out.log_csv().strip().splitlines()
    head = lines[0].split(",")
    assert head[:6] == ["iter", "objective", "eq_violation", "ineq_violation", "step_norm", "mu"]
    assert all(len(line.split(",")) == len(head) for line in lines[1:])
    assert len(lines) == out.iterations + 1


def test_converged_outcome_is_feasible(lq_collocation):
    out = solve(lq_collocation)
    assert isinstance(out, SolveOutcome) and out.success
    assert out.eq_violation <= 10 * SolverOptions().tol * max(1.0, np.max(np.abs(out.x)))


def test_callback_early_termination(lq_collocation):
    seen = []

    def accept(z):
        seen.append(z)
        return len(seen) == 3

    out = solve(lq_collocation, opts=SolverOptions(callback=accept))
    assert out.status == "early-terminated"
    assert np.array_equal(out.x, seen[-1])


def test_max_iterations_status(lq_collocation):
    out = solve(lq_collocation, opts=SolverOptions(max_iterations=1))
    assert out.status == "max-iterations"
