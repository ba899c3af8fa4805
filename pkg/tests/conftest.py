import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Record and print one pass/fail line for an acceptance criterion."""
    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
