import pytest

_ACCEPTANCE = []


@pytest.fixture
def record():
    """Collect one summary line per acceptance criterion."""
    return _ACCEPTANCE.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
