"""Shared test plumbing: acceptance verdicts are collected here and printed
as one PASS/FAIL line per criterion at the end of the run."""

ACCEPTANCE_LINES: dict[int, str] = {}


def record(number: int, passed: bool, title: str, detail: str) -> bool:
    ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title} -- {detail}"
    print(ACCEPTANCE_LINES[number])
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
