import pytest


@pytest.fixture
def verdict(request):
    """Print one visible PASS/FAIL line for an acceptance criterion, then assert it."""
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(line):
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)

    def report(number, ok, detail):
        line = f"[acceptance {number}] {'PASS' if ok else 'FAIL'}: {detail}"
        emit(line)
        assert ok, line

    def skip(number, why):
        emit(f"[acceptance {number}] SKIP: {why}")
        pytest.skip(why)

    report.skip = skip
    return report
