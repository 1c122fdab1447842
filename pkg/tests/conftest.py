import numpy as np
import pytest

from lidarmotion.lidar_geom import SensorModel

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed_setup = rep.when == "setup" and not rep.passed
    if rep.when == "call" or failed_setup:
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _CRITERIA.append((marker.args[0], marker.args[1], rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, title, passed, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))


@pytest.fixture
def detail(record_property):
    """Attach a human-readable measurement to the criterion line of this test."""

    def add(text):
        record_property("detail", text)

    return add


@pytest.fixture(scope="session")
def sensor():
    return SensorModel()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
