"""Shared fixtures: tiny models that keep unit tests fast."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from oransim import nn

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TINY_CNN = (nn.Conv2D(2, (3, 3)), nn.MaxPool2D((2, 2)), nn.Conv2D(3, (2, 2)), nn.Flatten(),
            nn.Dense(5, "relu"), nn.Dense(2))
TINY_DNN = (nn.Dense(6, "relu"), nn.Dense(4, "relu"), nn.Dense(2))


@pytest.fixture
def tiny_cnn():
    return nn.init_model(TINY_CNN, (8, 8, 1), seed=3)


@pytest.fixture
def tiny_dnn():
    return nn.init_model(TINY_DNN, (12,), seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def kpm_model_t3():
    """Small KPM classifier (t=3 windows) trained on simulated link traces."""
    from oransim import datagen, models
    X, y = datagen.kpm_arrays(300, 300, seed=0, t=3)
    return nn.train(models.build_kpm_model(t=3, seed=0), X, y, nn.TrainConfig(0.1, 30, 32, seed=0))


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    """Remember one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE_LINES[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
