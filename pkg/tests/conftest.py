import pytest

_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record an acceptance result; returns ``passed`` so tests can assert on it."""

    def record(label, passed, detail=""):
        _ACCEPTANCE.append((label, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, passed, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split()[0][1:])):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {label}: {detail}")
