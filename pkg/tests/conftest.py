import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from alphamine.panel import OhlcvPanel, synth_panel

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_panel(opens, dates=None, tickers=None, volume=1000.0) -> OhlcvPanel:
    """Flat bars (open = high = low = close) from an opens matrix."""
    o = np.asarray(opens, dtype=float)
    if dates is None:
        dates = np.datetime64("2021-01-04") + np.arange(o.shape[0])
    tickers = tuple(tickers or (f"T{i}" for i in range(o.shape[1])))
    v = np.full(o.shape, volume)
    return OhlcvPanel(np.asarray(dates, dtype="datetime64[D]"), tickers, o, o.copy(), o.copy(), o.copy(), v)


@pytest.fixture(scope="session")
def small_panel():
    return synth_panel(3, 60, 8, 0.5)


@pytest.fixture(scope="session")
def causal_panel():
    return synth_panel(11, 120, 20, 0.5)


# --- one summary line per acceptance criterion --------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = rep.failed or (rep.when == "call" and rep.skipped)
    prev = _CRITERIA.get(number)
    if rep.when == "call" or failed:
        if prev is None or prev[0] == "PASS":
            _CRITERIA[number] = ("FAIL" if failed else "PASS", title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} [{status}] {title}")
