import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    def record(number: int, title: str, passed: bool, detail: str) -> None:
        status = "PASS" if passed else "FAIL"
        _ACCEPTANCE_LINES.append(f"[{status}] criterion {number:>2}: {title} | {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)
