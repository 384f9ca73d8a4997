import numpy as np
import pytest

from oukl.group_core import DriftModel

B3 = np.array([[0.0, -1.0, 2.0], [1.0, 0.0, -0.5], [-2.0, 0.5, 0.0]])


@pytest.fixture
def rot2():
    return DriftModel.rotation(1.0)


@pytest.fixture
def anti3():
    return DriftModel(B3)


def random_antisymmetric(rng, n, scale=1.0):
    A = rng.normal(scale=scale, size=(n, n))
    return A - A.T


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one status line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)
