import pytest

_ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = {}


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, title, passed, detail):
        lines[number] = f"criterion {number} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
