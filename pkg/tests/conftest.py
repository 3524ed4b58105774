import pytest

_VERDICTS = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    recorded = []

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        recorded.append(line)
        _VERDICTS.append(line)
        print(line)
        return ok

    yield record
    if not recorded:
        _VERDICTS.append(f"FAIL {request.node.name}: raised before reaching a verdict")


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
