import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qtensor_fd.fields import GridSpec  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=[(2, 5), (3, 3)], ids=["2d", "3d"])
def small_grid(request):
    dim, n = request.param
    return GridSpec(dim=dim, n_interior=n, side=1.0)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one summary line per acceptance criterion; printed at session end."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, passed, detail, seconds):
        lines.append((number, f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}  [{seconds:.1f} s]"))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda item: item[0]):
            terminalreporter.write_line(line)
