import numpy as np
import pytest

from marangoni.heatprofile import PhysicalConfig, tune_d
from marangoni.spectral import tuned_modes


@pytest.fixture(scope="session")
def cfg2():
    """Stable N = 2 desk configuration with the short layer h = log(nu)."""
    return PhysicalConfig.preset(2, h_rule="log")


@pytest.fixture(scope="session")
def prof2(cfg2):
    return tune_d(cfg2, "finite")


@pytest.fixture(scope="session")
def prof2_limit(cfg2):
    return tune_d(cfg2, "limit")


@pytest.fixture(scope="session")
def modes2(prof2):
    return tuned_modes(prof2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, in criterion order."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
