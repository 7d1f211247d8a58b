import pytest

_VERDICTS: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_record():
    """``record(number, line)`` stores one verdict line per acceptance criterion."""

    def record(number: int, line: str) -> None:
        _VERDICTS[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
