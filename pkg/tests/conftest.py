import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from labeltree.dataset import SyntheticSpec, balanced_topology, from_arrays, generate_synthetic


@pytest.fixture
def tiny3():
    # 1-D clouds a={0,1}, b={2}, c={10}
    return from_arrays([[0.0], [1.0], [2.0], [10.0]], [0, 0, 1, 2], label_names=["a", "b", "c"])


@pytest.fixture
def four_groups():
    spec = SyntheticSpec(((0, 1), (2, 3)), 100.0, 1.0, 60, 3, seed=1)
    return generate_synthetic(spec)


@pytest.fixture
def eight_balanced():
    spec = SyntheticSpec(balanced_topology(8), 100.0, 1.0, 80, 8, seed=3)
    return generate_synthetic(spec)


def random_small(rng, L=3, max_pts=6, K=None):
    K = K or int(rng.integers(1, 4))
    clouds = [rng.integers(-3, 4, size=(int(rng.integers(1, max_pts + 1)), K)).astype(float)
              for _ in range(L)]
    X = np.vstack(clouds)
    y = np.concatenate([[a] * len(c) for a, c in enumerate(clouds)])
    return from_arrays(X, y), clouds


def pytest_terminal_summary(terminalreporter):
    import report

    if report.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(report.LINES):
            terminalreporter.write_line(line)
