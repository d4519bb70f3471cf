import numpy as np
import pytest

from conic_splitter.solver import ConeProgram, SolverOptions, solve
from conic_splitter.cones import ConeSpec


@pytest.fixture(scope="session", autouse=True)
def jit_warmup():
    """Compile (or load) the numba kernels once so timings exclude it."""
    p = ConeProgram(np.array([[1.0]]), np.array([1.0]), np.array([-1.0]),
                    ConeSpec([("l", 1)]))
    solve(p, SolverOptions(max_iters=50))
    solve(p, SolverOptions(max_iters=50, equilibrate=True))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def acceptance():
    """``acceptance(label, passed, detail)`` records one criterion line."""
    def record(label, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
        _ACCEPTANCE.append((label, bool(passed), detail))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split()[1])):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}")
