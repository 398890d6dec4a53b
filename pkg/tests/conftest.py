import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "parsimix", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile("parsimix")

FIXTURES = Path(__file__).parent / "fixtures"
ENGAGEMENT_ENV = "PARSIMIX_ENGAGEMENT_CSV"
ENGAGEMENT_COLUMNS = ["PRE_ENG_COND", "PRE_ENG_COGN", "PRE_ENG_EMOC"]
ENGAGEMENT_RENAMES = {"PRE_ENG_COND": "BehvEngmnt", "PRE_ENG_COGN": "CognEngmnt", "PRE_ENG_EMOC": "EmotEngmnt"}

_criteria = {}


def engagement_path():
    env = os.environ.get(ENGAGEMENT_ENV)
    if env:
        return env
    path = FIXTURES / "engagement.csv"
    return str(path) if path.exists() else None


def blobs(seed, n=240, d=2, K=3, spread=4.0):
    """Well separated Gaussian clusters with known labels (0-based)."""
    rng = np.random.default_rng(seed)
    centres = rng.normal(scale=spread, size=(K, d))
    labels = np.arange(n) % K
    X = centres[labels] + rng.normal(scale=rng.uniform(0.4, 1.2, size=(K, d))[labels])
    return X, labels


@pytest.fixture
def criterion(request):
    """Record a named acceptance criterion; its pass/fail line is printed in the summary."""
    marker = request.node.get_closest_marker("acceptance")
    name = marker.args[0] if marker and marker.args else request.node.name
    detail = {}
    _criteria.setdefault(name, {"ok": True, "detail": detail, "seen": False})
    yield detail


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args or report.when not in ("setup", "call"):
        return
    entry = _criteria.setdefault(marker.args[0], {"ok": True, "detail": {}, "seen": False})
    entry["seen"] = True
    if report.failed or report.skipped:
        entry["ok"] = False
        if call.excinfo is not None:
            entry["detail"].setdefault("error", str(call.excinfo.value).splitlines()[0][:200])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        entry = _criteria[name]
        if not entry["seen"]:
            continue
        status = "PASS" if entry["ok"] else "FAIL"
        extra = "; ".join(f"{k}={v}" for k, v in entry["detail"].items())
        terminalreporter.write_line(f"{name}: {status}{'  (' + extra + ')' if extra else ''}")
