import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from phasereg import build_grid, build_kernels, RadialKernelSpec  # noqa: E402


@pytest.fixture(scope="session")
def small():
    """16x16-class problem: N=17 (odd), T=5."""
    g = build_grid(17, 1.0, 5, 0.1)
    return g, build_kernels(g, RadialKernelSpec())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting ------------------------------------------------------
# tests/test_acceptance.py records one line per criterion here; the lines are
# printed in the terminal summary so they survive output capturing.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
