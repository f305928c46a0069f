"""Shared pytest wiring: a status line per acceptance criterion.

Criterion tests record a human-readable detail string through
``record_property``; this plugin collects pass/fail per criterion and
prints one line each in the terminal summary.
"""

import re

_CRITERION_RE = re.compile(r"test_criterion_(\d+)_(\w+)")
_STATUS = {}


def pytest_runtest_logreport(report):
    match = _CRITERION_RE.search(report.nodeid)
    if match is None:
        return
    number, name = match.group(1), match.group(2).replace("_", " ")
    if report.when == "setup" and report.failed:
        _STATUS[number] = (name, "FAIL", "setup error")
    elif report.when == "call":
        detail = dict(report.user_properties).get("detail", "")
        _STATUS[number] = (name, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _STATUS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_STATUS):
        name, status, detail = _STATUS[number]
        line = f"criterion {number} ({name}): {status}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)
