import pytest

_LINES = {}


class Recorder:
    """Collects one verdict line per acceptance criterion."""

    def __call__(self, criterion, title, checks):
        ok = all(passed for _, passed in checks)
        detail = "; ".join(f"{'ok' if passed else 'FAIL'} {msg}" for msg, passed in checks)
        line = f"criterion {criterion} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        _LINES[criterion] = line
        print(line)
        return ok


@pytest.fixture(scope="session")
def record():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES):
        terminalreporter.write_line(_LINES[key])
