import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tpswarp.geometry import ControlGrid, regular_lattice  # noqa: E402


def perturbed_grid(rows, cols, rng, amount=0.1):
    pts = regular_lattice(rows, cols) + rng.uniform(-amount, amount, size=(rows * cols, 2))
    return ControlGrid(rows, cols, pts)


def jittered_source(rows, cols, rng):
    """A lattice jittered by less than a third of the spacing (points stay distinct)."""
    step = 2.0 / (max(rows, cols) - 1)
    pts = regular_lattice(rows, cols) + rng.uniform(-0.3 * step, 0.3 * step, size=(rows * cols, 2))
    return ControlGrid(rows, cols, pts)


def smooth_grid(n, rng, amount=0.08):
    """Low-frequency displacement sampled on an n x n lattice."""
    lat = regular_lattice(n, n)
    a = rng.uniform(-amount, amount, size=4)
    x, y = lat[:, 0], lat[:, 1]
    disp = np.stack([a[0] * np.sin(np.pi * y / 2) + a[1] * x * y, a[2] * np.cos(np.pi * x / 2) + a[3] * x * x], 1)
    return ControlGrid(n, n, lat + disp)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.__dict__.setdefault("_criterion_lines", [])

    def report(number, title, ok, detail=""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        lines.append((number, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_criterion_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
