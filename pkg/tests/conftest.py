import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fitted_methane():
    """Direct SIREN fit of methane shared by the mnf, diffusion and reconstruct tests."""
    from molfields import mnf, toys

    m = toys.methane()
    theta, hist = mnf.fit_mnf(m, steps=2000, seed=0, return_history=True)
    return m, theta, hist


# --- acceptance summary ----------------------------------------------------
# Every test in test_acceptance.py records a "criterion" (and usually a
# "detail") property; one PASS/FAIL line per criterion is printed at the end,
# including tests that errored before recording anything.

_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    entry = _acceptance.setdefault(report.nodeid, {"name": report.nodeid.split("::")[-1], "ok": True, "detail": ""})
    entry["name"] = props.get("criterion", entry["name"])
    entry["detail"] = props.get("detail", entry["detail"])
    if report.failed:
        entry["ok"] = False
        if not entry["detail"]:
            entry["detail"] = str(report.longrepr).strip().splitlines()[-1][:200]
    if report.skipped:
        entry["ok"] = None


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for entry in _acceptance.values():
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[entry["ok"]]
        terminalreporter.write_line(f"{status}  {entry['name']}: {entry['detail']}")
