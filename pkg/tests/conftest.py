import numpy as np
import pytest

from fbmc_tdce.filterbank import FbmcConfig
from fbmc_tdce.sysmodel import system_model

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def cfg16():
    return FbmcConfig(16, 3)


@pytest.fixture(scope="session")
def cfg64():
    return FbmcConfig(64, 3)


@pytest.fixture(scope="session")
def sys64(cfg64):
    return system_model(cfg64, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
