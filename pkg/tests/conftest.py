import pytest

from kinesim.simcore import Registry
from kinesim.urdf import load_model

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry = _CRITERIA.setdefault(marker.args[0], {"passed": 0, "failed": []})
        if report.passed:
            entry["passed"] += 1
        else:
            entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        if entry["failed"]:
            terminalreporter.write_line(f"criterion {n}: FAIL ({', '.join(entry['failed'])})")
        else:
            terminalreporter.write_line(f"criterion {n}: PASS ({entry['passed']} checks)")


@pytest.fixture(scope="session")
def pepper():
    return load_model("pepper_simple")


@pytest.fixture(scope="session")
def nao():
    return load_model("nao_simple")


@pytest.fixture(scope="session")
def two_link():
    return load_model("two_link")


@pytest.fixture(scope="session")
def planar():
    return load_model("planar_2r")


@pytest.fixture
def registry():
    return Registry()
