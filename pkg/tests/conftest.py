import pytest

# (number, title, passed, detail) tuples filled by tests/test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    def report(number, title, passed, detail):
        line = (number, title, bool(passed), detail)
        ACCEPTANCE_LINES.append(line)
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} ({detail})")
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} ({detail})")
