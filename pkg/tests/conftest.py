"""Collects the acceptance verdict lines and prints them after the run."""

import re

ACCEPTANCE_LINES = []


def record(tag: str, ok: bool, detail: str) -> str:
    line = f"criterion {tag}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append((tag, line))
    print(line)
    return line


def _order(tag):
    m = re.match(r"(\d+)(.*)", tag)
    return (int(m.group(1)), m.group(2)) if m else (10 ** 6, tag)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: _order(t[0])):
        terminalreporter.write_line(line)
