import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def toy_model():
    from emfisim import toy

    return toy.toy_model()


@pytest.fixture(scope="session")
def toy_eval():
    from emfisim import toy

    return toy.toy_eval_set()


# -- one PASS/FAIL line per acceptance criterion ------------------------------------

_criteria: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None and (report.when == "call" or report.failed):
        label = marker.args[0]
        prev = _criteria.get(label, "PASS")
        _criteria[label] = "FAIL" if report.failed or prev == "FAIL" else "PASS"
    return report


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome in _criteria.items():
        terminalreporter.write_line(f"{outcome}  {label}")
