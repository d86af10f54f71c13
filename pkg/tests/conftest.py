import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from diode_bridge.crypto import generate_keys

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def keys():
    return generate_keys()


@pytest.fixture(scope="session")
def other_keys():
    return generate_keys()


@pytest.fixture
def golden():
    return lambda name: (GOLDEN / name).read_bytes()


# acceptance reporting: one line per criterion in the terminal summary
_ACCEPTANCE: list[tuple[int, str, str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        status = "PASS" if rep.passed else "FAIL"
        _ACCEPTANCE.append((marker.args[0], marker.args[1], status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, status, detail in sorted(_ACCEPTANCE):
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"[{status}] {num:>2}. {title}{suffix}")
