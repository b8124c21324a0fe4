import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance_line():
    def put(number: int, line: str) -> None:
        _LINES[number] = line

    return put


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_LINES):
            terminalreporter.write_line(_LINES[k])
