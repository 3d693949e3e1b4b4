import numpy as np
import pytest

from layerif.toy import TaskConfig, ToyConfig, ToyTransformer, TrainConfig, generate_task, train

ACCEPTANCE_RESULTS = {}


@pytest.fixture(scope="session")
def task():
    return generate_task(TaskConfig())


@pytest.fixture(scope="session")
def trained(task):
    """Default toy model after 20 epochs, with its loss curve."""
    model, curve = train(ToyTransformer(ToyConfig()), task, TrainConfig(epochs=20))
    return model, curve


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    ACCEPTANCE_RESULTS[number] = (title, "PASS" if call.excinfo is None else "FAIL")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, outcome = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{outcome}] criterion {number:>2}: {title}")
