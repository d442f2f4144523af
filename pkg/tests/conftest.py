import numpy as np
import pytest

from dairopt.driver import solve_collocation
from dairopt.problems import get_problem
from dairopt.solver import SolverOptions, solve
from dairopt.transcription import build_dair_residual

_CRITERIA: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Remember an acceptance result for the end-of-run summary."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    _CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])


def record_residual_path(dop, mesh, weights=None, x0=None, opts=SolverOptions()):
    """Full residual minimization, keeping every iterate the callback sees."""
    nlp = build_dair_residual(dop, mesh, weights=weights)
    path = []

    def keep(z):
        path.append(z)
        return False

    out = solve(nlp, nlp.x0 if x0 is None else x0, opts.with_(callback=keep))
    return nlp, out, path


@pytest.fixture(scope="session")
def cartpole():
    case = get_problem("cartpole")
    return case, case.make(), case.mesh()


@pytest.fixture(scope="session")
def cartpole_colloc(cartpole):
    case, dop, mesh = cartpole
    return solve_collocation(dop, mesh, weights=case.weights)


@pytest.fixture(scope="session")
def residual_paths():
    """Residual-phase iterate paths from the default start, one per problem, computed lazily."""
    cache = {}

    def get(name):
        if name not in cache:
            case = get_problem(name)
            dop, mesh = case.make(), case.mesh()
            nlp, out, path = record_residual_path(dop, mesh, weights=case.weights)
            cache[name] = (case, dop, mesh, nlp, out, path)
        return cache[name]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
