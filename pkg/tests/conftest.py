"""Shared test plumbing: acceptance-criterion result reporting.

Criterion checks record one line each; the hook below prints them after the
run so pass/fail status is visible even though pytest captures stdout."""

_CRITERIA = []


def record_criterion(name, ok, detail=""):
    _CRITERIA.append((name, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line)
