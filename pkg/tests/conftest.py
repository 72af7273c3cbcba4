import numpy as np
import pytest

from spectraloss.grid import make_gaussian_grid
from spectraloss.sht import SpectralField, Truncation, random_spectral, synthesize


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid64():
    return make_gaussian_grid(64, 128)


def band_limited_field(grid, K, rng, psd=None):
    t = Truncation(K)
    return synthesize(SpectralField(t, random_spectral(t, rng, psd)), grid)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS.values():
            terminalreporter.write_line(line)
