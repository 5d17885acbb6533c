from __future__ import annotations

import os

import pytest
from hypothesis import HealthCheck, settings

from dclc.catalog import by_id, seed_catalog
from dclc.scenario import load_scenario
from dclc.search import PolicyBundle, ScenarioDistribution, ScenarioPool

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

MC_SEED = 0


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


_results = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed_setup = report.when == "setup" and not report.passed
    if report.when == "call" or failed_setup:
        detail = dict(item.user_properties).get("detail", "")
        _results.append((marker.args[0], marker.args[1], report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_results):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"C{number:<2} {status}  {title}: {detail}")


@pytest.fixture(scope="session")
def catalog():
    skus, models = seed_catalog()
    return by_id(skus), by_id(models)


@pytest.fixture(scope="session")
def baseline():
    return load_scenario("baseline")


@pytest.fixture(scope="session")
def baseline_bundle(baseline):
    return PolicyBundle(baseline.design)


@pytest.fixture(scope="session")
def mc(baseline):
    """Scenario distribution around the baseline plus a shared outcome pool."""
    dist = ScenarioDistribution(baseline)
    return dist, ScenarioPool(dist)
