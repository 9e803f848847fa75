import pytest

from nclab import build_chain

# (criterion, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE = []


@pytest.fixture(scope="session")
def chain5():
    return build_chain(5)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
