import numpy as np
import pytest

from fplab.grid import PeriodicGrid, ScalarField
from fplab.model import gaussian_density

ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


@pytest.fixture
def record_acceptance():
    def record(label: str, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append((label, bool(ok), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda x: int(x[0].split()[0][2:])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")


@pytest.fixture
def grid1d():
    return PeriodicGrid(1, 10.0, 256)


@pytest.fixture
def gauss1d(grid1d):
    return ScalarField.from_function(grid1d, gaussian_density())


def random_smooth(grid: PeriodicGrid, rng: np.random.Generator, k_max: int = 3) -> ScalarField:
    """Positive sum of 1-3 Gaussians, smooth enough to be resolved on the grid."""
    vals = np.zeros(grid.shape)
    for _ in range(rng.integers(1, k_max + 1)):
        c = rng.uniform(-3, 3, grid.dimension)
        w = rng.uniform(0.6, 1.5)
        a = rng.uniform(0.1, 0.5)
        r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords, c))
        vals += a * np.exp(-r2 / (2 * w * w))
    return ScalarField(grid, vals)
