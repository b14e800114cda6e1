"""Collects acceptance verdict lines and replays them after the test run.

pytest captures file descriptors, so a passing test cannot print its
verdict directly; tests register lines here and the terminal summary
shows every criterion with its measured numbers, pass or fail.
"""

VERDICT_LINES = []


def record_verdict(line: str) -> None:
    VERDICT_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in VERDICT_LINES:
            terminalreporter.write_line(line)
