from __future__ import annotations

import sys
from datetime import datetime, timedelta
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from energy_donation.ingestion import ReadingSeries  # noqa: E402

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def make_readings(profiles: dict, hours: int, start: str = "2021-09-01T00:00") -> ReadingSeries:
    """profiles: peer -> (production Wh, consumption Wh), constant or per-hour lists."""
    t0 = datetime.fromisoformat(start)
    stamps = [t0 + timedelta(hours=i) for i in range(hours)]

    def series(v):
        return list(v) if isinstance(v, (list, tuple)) else [v] * hours

    return ReadingSeries(
        stamps,
        {p: series(prod) for p, (prod, _) in profiles.items()},
        {p: series(cons) for p, (_, cons) in profiles.items()},
    )


@pytest.fixture
def acceptance(request):
    """Record the outcome of one acceptance criterion under ``name``."""
    def record(name: str, detail: str = ""):
        request.node._acceptance = (name, detail)
    yield record
    name, detail = getattr(request.node, "_acceptance", (request.node.name, ""))
    rep = getattr(request.node, "rep_call", None)
    passed = rep is not None and rep.passed
    ACCEPTANCE_RESULTS[name] = (passed, detail)


@pytest.hookimpl(hookwrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda n: int(n.split(".")[0]) if n[0].isdigit() else 99):
        passed, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())
