import numpy as np
import pytest

from evload import _kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once so timed tests measure steady-state cost."""
    if _kernels.HAS_NUMBA:
        _kernels.rasterize_numba(np.zeros(1, np.int64), np.zeros(1), np.ones(1), np.ones(1), 1, 4, 1.0)
        _kernels.segment_runs_numba(np.ones(4), 0.5, 1, 1)
        _kernels.kde_pdf_numba(np.zeros((1, 1)), np.zeros((2, 1)), np.ones(1), np.zeros(1, np.bool_), 24.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240615)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; also echoed to stdout."""

    def emit(criterion: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
