import pytest

from boxforge import _backend

ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(params=sorted(_backend.BACKENDS))
def backend(request):
    """Run the test once per available kernel backend."""
    prev = _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(prev)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}{'  ' + detail if detail else ''}")
