import numpy as np
import pytest

from fibered import fields as fl
from fibered import model as md
from fibered import solver as sv
from fibered import scenarios as sc


@pytest.fixture(scope="session")
def blwz_2d():
    """Solved two-component phase-separation pair on the default strip."""
    params = sc.REGISTRY["blwz-2d-fibered"].defaults
    ctx = sc.Context(seed=0)
    problem, init, extension = sc._blwz_2d(params, ctx)
    sol, log = sv.solve(problem, init, sv.SolverConfig(residual_tol=1e-10))
    assert log.converged
    return problem, sol, extension


@pytest.fixture(scope="session")
def allen_cahn():
    g = fl.make_grid([(-2, 2), (-8, 8)], [21, 161], 1, ("neumann", "dirichlet"))
    problem = md.Problem([md.constant_coefficient()], md.allen_cahn_potential(), g)
    y = g.points()[..., 1]
    init = md.SolutionTuple([fl.ScalarField(g, np.clip(y / 3.0, -1.0, 1.0))])
    sol, log = sv.solve(problem, init, sv.SolverConfig(residual_tol=1e-10))
    assert log.converged
    return problem, sol


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """``record(k, ok, detail)`` prints and stores one line per acceptance criterion."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(k, ok, detail):
        line = f"ACCEPTANCE {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((k, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
