import os

os.environ.setdefault("FORCEDMCF_TEST_MODE", "1")

from hypothesis import HealthCheck, settings  # noqa: E402

settings.register_profile("ci", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

import pytest  # noqa: E402

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def verdict():
    """Record one acceptance line: verdict(label, passed, detail)."""
    def rec(label, passed, detail):
        _ACCEPTANCE.append(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")
        print(_ACCEPTANCE[-1], flush=True)
        return passed
    return rec


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
