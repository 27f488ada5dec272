import numpy as np
import pytest

from loram.rng import Rng, gaussian_matrix


@pytest.fixture
def rng():
    return Rng(1234)


def randn(seed, rows, cols, sigma=1.0):
    return gaussian_matrix(Rng(seed), rows, cols, sigma)


@pytest.fixture
def random_matrix():
    return randn


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
