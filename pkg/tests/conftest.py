import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uwbcal.geometry import AnchorConstellation, Mode
from uwbcal.measurement import BiasFieldParams, NoiseConfig
from uwbcal.nn import TrainConfig, train
from uwbcal.sim import generate_dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    """Store one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def world():
    return AnchorConstellation.cuboid(), BiasFieldParams(), NoiseConfig()


class Trained:
    def __init__(self, mode, dataset, model, history, seconds):
        self.mode, self.dataset, self.model, self.history, self.seconds = mode, dataset, model, history, seconds


_TRAINED = {}


def trained_model(mode) -> Trained:
    """Default dataset + default training for ``mode``; built once per session."""
    mode = Mode.parse(mode)
    if mode not in _TRAINED:
        constellation, bias, noise = AnchorConstellation.cuboid(), BiasFieldParams(), NoiseConfig()
        data = generate_dataset(constellation, bias, noise, mode)
        t0 = time.perf_counter()
        model, history = train(data, TrainConfig())
        _TRAINED[mode] = Trained(mode, data, model, history, time.perf_counter() - t0)
    return _TRAINED[mode]


@pytest.fixture(scope="session")
def twr_trained():
    return trained_model(Mode.TWR)


@pytest.fixture(scope="session")
def tdoa_trained():
    return trained_model(Mode.TDOA)
