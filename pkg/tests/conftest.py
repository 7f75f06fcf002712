import pytest

ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report_criterion():
    def record(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record
