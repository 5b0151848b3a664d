import numpy as np
import pytest


def random_dataset(rng, n_max=64, p_max=5, n_classes=3):
    """Small classification set with coarse values so ties and duplicates occur."""
    n = int(rng.integers(2, n_max + 1))
    p = int(rng.integers(1, p_max + 1))
    scale = rng.choice([1.0, 0.5, 0.25])
    X = np.round(rng.normal(size=(n, p)) * 3) * scale
    y = rng.integers(0, n_classes, size=n)
    if rng.random() < 0.5:
        w = np.ones(n)
    else:
        w = rng.choice([0.5, 1.0, 2.0, 3.0], size=n)
    return X, y, w


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
