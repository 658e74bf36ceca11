import pytest

from horizonlab.geometry import BlackHoleBackground


@pytest.fixture(scope="session")
def extreme():
    return BlackHoleBackground.extreme_rn(1.0)


@pytest.fixture(scope="session")
def subextreme():
    return BlackHoleBackground.from_ratio(1.0, 0.8)


def pytest_terminal_summary(terminalreporter):
    from _report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
