import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from condwalk.config import fixture_ensemble

settings.register_profile("condwalk", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("condwalk")


@pytest.fixture(scope="session")
def fixtures():
    """Shipped ensembles by name, built once per session."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = fixture_ensemble(name)
        return cache[name]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[k].line())
