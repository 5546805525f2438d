import numpy as np
import pytest

from multirep.model import Classifier

TINY_ARCH = (
    {"type": "conv", "filters": 3, "kernel": 3, "stride": 1},
    {"type": "relu"},
    {"type": "pool", "window": 2},
    {"type": "flatten"},
    {"type": "dense", "units": 4},
)


def tiny_model(seed=0, shape=(8, 8, 1)):
    return Classifier(TINY_ARCH, shape, seed=seed)


def tiny_batch(seed=0, n=6, shape=(8, 8, 1), classes=4):
    rng = np.random.default_rng(seed)
    return rng.uniform(size=(n,) + shape), rng.integers(0, classes, size=n)


@pytest.fixture
def model():
    return tiny_model()


@pytest.fixture
def batch():
    return tiny_batch()


_CRITERIA = {}


def record_criterion(number, passed, detail):
    line = f"[criterion {number}] {'PASS' if passed else 'FAIL'}: {detail}"
    _CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
