import numpy as np
import pytest
from hypothesis import settings

from dtslice.domain import ScenarioConfig, build_catalog, replace

# first calls compile numba kernels, so wall-clock deadlines are meaningless
settings.register_profile("dtslice", deadline=None, max_examples=60)
settings.load_profile("dtslice")


@pytest.fixture
def cfg():
    return ScenarioConfig()


@pytest.fixture
def small_cfg():
    # 12 users, short windows: fast end-to-end runs
    return replace(ScenarioConfig(), n_users=12, large_ts=20.0, sim_windows=2, history_views=60,
                   organic_views=5)


@pytest.fixture
def catalog(cfg):
    return build_catalog(cfg.catalog, np.random.default_rng(0))


def pytest_terminal_summary(terminalreporter):
    from tests.test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
