import pytest

_LINES: dict[int, str] = {}


class AcceptanceReport:
    def record(self, number: int, passed: bool, title: str, detail: str = "") -> bool:
        status = "PASS" if passed else "FAIL"
        _LINES[number] = f"criterion {number}: {status}  {title}" + (f"  [{detail}]" if detail else "")
        print(_LINES[number])
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceReport()


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_LINES):
        terminalreporter.write_line(_LINES[n])
