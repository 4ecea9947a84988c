"""Shared test plumbing: the acceptance summary printed after the run."""

RESULTS: list[tuple[int, str, bool, str]] = []


def record(number: int, name: str, passed: bool, detail: str = "") -> None:
    RESULTS.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, name, passed, detail in sorted(RESULTS):
        word = "pass" if passed else "FAIL"
        line = f"criterion {number:2d} [{word}] {name}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
