import pytest

# filled by tests/test_acceptance.py, one entry per criterion
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[number])
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
