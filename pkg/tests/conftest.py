"""Collects one pass/fail line per acceptance criterion and prints them at the end of the run."""

CRITERIA: dict[int, str] = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    CRITERIA[number] = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}" + (f": {detail}" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[number])
