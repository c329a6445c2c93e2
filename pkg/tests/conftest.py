"""Shared pytest hooks.

Acceptance tests record a verdict per criterion in ``ACCEPTANCE``; the terminal
summary prints one line per criterion so the gate is readable even when
output capture is on.
"""

ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def record(number: int, name: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (bool(passed), name, detail)
    print(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
