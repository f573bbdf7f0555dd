import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance reporting: tests marked ``criterion(n, text)`` are pooled per
# criterion and summarised as one PASS/FAIL line at the end of the session.
_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion this test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    n, text = mark.args
    entry = _criteria.setdefault(n, {"text": text, "ok": True, "count": 0})
    if report.when == "call":
        entry["count"] += 1
    if report.failed or report.skipped:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] and e["count"] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {e['text']} ({e['count']} test(s))")
