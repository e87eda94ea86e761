import os

import pytest
from hypothesis import HealthCheck, settings

from sbidma import derive

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

REFERENCE = dict(k=100, n_c=4000, n0=50)
MU_LOW = 8.41e-4
MU_HIGH = 3.40e-3


@pytest.fixture
def ref_params():
    return derive(dict(REFERENCE, mu=MU_LOW))


@pytest.fixture
def small_params():
    # short code used where the reference blocklength makes phi vanish
    return derive(dict(k=8, n_c=40, n0=4, mu=0.02, ebno_db=2.0))


ACCEPTANCE_LINES = []


def acceptance_report(label, ok, detail):
    line = f"{label}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
