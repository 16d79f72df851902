import numpy as np
import pytest

from bootood.config import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """A run small enough for CLI round trips in a couple of seconds."""
    return RunConfig(n_train=40, n_val=20, n_test=20, near_n=60, far_n=60, epochs=6, warmup_epochs=3,
                     hidden=(16,), feature_dim=6, batch_size=32, seeds=(0, 1))


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
