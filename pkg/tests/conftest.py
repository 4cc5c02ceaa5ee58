import numpy as np
import pytest

from gpgomea.fitness import Dataset, TrainingData
from gpgomea.tree import SymbolSet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(n=120, d=3, seed=0, noise=0.01, name="synthetic") -> Dataset:
    """Smooth target in the first three features plus a little noise."""
    r = np.random.default_rng(seed)
    X = r.uniform(-2.0, 2.0, size=(n, d))
    y = X[:, 0] * X[:, 1 % d] + np.sin(X[:, 2 % d]) + noise * r.normal(size=n)
    return Dataset(X, y, name)


@pytest.fixture
def dataset():
    return make_dataset()


@pytest.fixture
def training(dataset):
    return TrainingData(dataset.features, dataset.target)


@pytest.fixture
def sets():
    return SymbolSet(("+", "-", "*", "aq"), 3)


@pytest.fixture
def erc_sets():
    return SymbolSet(("+", "-", "*", "aq"), 3, erc=(-2.0, 2.0))


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
