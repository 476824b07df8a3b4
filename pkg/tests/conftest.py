import time

import pytest

from greenlight.policy import PPOConfig, train
from greenlight.scenario import training_scenario

TRAIN_STEPS = 50_000
TRAIN_SEED = 0


@pytest.fixture(scope="session")
def trained():
    """Train the backbone once per session; several suites share it.

    The elapsed wall time is kept so the acceptance gate can check the
    training budget on the same run it evaluates.
    """
    start = time.monotonic()
    params, curve = train(training_scenario().make_env, PPOConfig(),
                          TRAIN_STEPS, seed=TRAIN_SEED)
    elapsed = time.monotonic() - start
    return {"params": params, "curve": curve, "elapsed_s": elapsed}


@pytest.fixture(scope="session")
def trained_params(trained):
    return trained["params"]


@pytest.fixture
def report(capsys):
    """Print a line that survives pytest's output capture."""
    def _report(line):
        with capsys.disabled():
            print(line)
    return _report
