"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_RESULTS = {}   # number -> (title, [(status, detail), ...])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when != "call" and report.passed:
        return
    if report.skipped:
        status = "SKIP"
        detail = report.longrepr[2] if isinstance(report.longrepr, tuple) else ""
    else:
        status = "PASS" if report.passed else "FAIL"
        detail = dict(item.user_properties).get("detail", "")
    number, title = marker.args
    _RESULTS.setdefault(number, (title, []))[1].append((status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, outcomes = _RESULTS[number]
        statuses = {s for s, _ in outcomes}
        status = "FAIL" if "FAIL" in statuses else "PASS" if "PASS" in statuses else "SKIP"
        detail = "; ".join(d for _, d in outcomes if d)
        line = f"criterion {number} ({title}): {status}"
        terminalreporter.write_line(f"{line} - {detail}" if detail else line)
