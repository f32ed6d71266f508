import numpy as np
import pytest

from pericard.mesh import generate_half_ellipsoid


@pytest.fixture(scope="session")
def ellipsoid_mesh():
    """Coarse benchmark-shaped shell, one element through the wall."""
    return generate_half_ellipsoid((7e-3, 7e-3, 17e-3), (10e-3, 10e-3, 20e-3), 4e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def report(request):
    """Print one pass/fail line for an acceptance criterion, then assert it."""
    lines = request.config.stash[_LINES]

    def emit(number, checks):
        failed = [name for name, (ok, _) in checks.items() if not ok]
        detail = "; ".join(f"{name} {'ok' if ok else 'FAIL'} ({info})" for name, (ok, info) in checks.items())
        line = f"criterion {number}: {'FAIL' if failed else 'PASS'} - {detail}"
        lines.append((number, line))
        print(line)
        assert not failed, line

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
