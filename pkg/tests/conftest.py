"""Acceptance summary: one PASS/FAIL line per criterion at the end of the run."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = tuple(marker.args)
    ok, detail = _RESULTS.get(key, (True, []))
    # an expected failure still counts as a failed criterion
    bad = report.failed or hasattr(report, "wasxfail") or (report.when == "call" and report.skipped)
    if report.when == "call":
        detail = [f"{k}={v}" for k, v in item.user_properties]
    _RESULTS[key] = (ok and not bad, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), (ok, detail) in sorted(_RESULTS.items()):
        line = f"criterion {number:2d}  {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{', '.join(detail)}]" if detail else ""))
