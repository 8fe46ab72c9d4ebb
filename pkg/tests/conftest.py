import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion id")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    ok = _results.get(number, (title, True, ""))[1]
    if report.when == "call" or report.outcome != "passed":
        if report.skipped:
            return
        note = ""
        if not report.passed:
            ok = False
            note = f" ({item.name})"
        _results[number] = (title, ok, _results.get(number, (title, True, ""))[2] + note)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, ok, note = _results[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}{note}")
