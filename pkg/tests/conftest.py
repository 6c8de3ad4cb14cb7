import numpy as np
import pytest

from fastcommittor.dataset import TrajectoryDataset
from fastcommittor.regions import triple_well_regions

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def regions():
    return triple_well_regions()


def random_pairs(rng, n, dim=3, regions=None, step=0.3, hit_fraction=0.1):
    """Random pairs around the two discs with a share of end points inside B."""
    regions = regions or triple_well_regions()
    x = rng.uniform(-1.5, 1.5, (n, dim))
    y = x + step * rng.standard_normal((n, dim))
    hit = rng.choice(n, size=max(1, int(hit_fraction * n)), replace=False)
    y[hit, :2] = np.asarray(regions.b_center) + 0.1 * rng.uniform(-1, 1, (len(hit), 2))
    w = rng.uniform(0.5, 2.0, n)
    return TrajectoryDataset.from_regions(x, y, w, regions)


@pytest.fixture
def small_data():
    return random_pairs(np.random.default_rng(7), 200, dim=3)
