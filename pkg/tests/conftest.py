import warnings

import numpy as np
import pytest

from nsibf.model import NetConfig, NsibfModel, train
from nsibf.simcps import SimConfig, simulate_normal, simulate_test

# small stacked setup that trains in a couple of seconds
QUICK = dict(n_sensors=1, n_actuators=1, stack=8, state_dim=2, window=2, stride=1, hidden_dim=16, epochs=30, lr=3e-3)


def quick_config(**kw) -> NetConfig:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return NetConfig(**{**QUICK, **kw})


@pytest.fixture(scope="session")
def sim_frames():
    cfg = SimConfig(seed=3)
    return simulate_normal(cfg, 2000), simulate_test(cfg, 2000)


@pytest.fixture(scope="session")
def quick_model(sim_frames) -> NsibfModel:
    return train(sim_frames[0], quick_config())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
