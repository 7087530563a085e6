import pytest

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result()._criterion = tuple(marker.args)


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    number, title = marker
    entry = _results.setdefault(number, {"title": title, "passed": True, "seconds": None})
    if report.failed or (report.when == "call" and report.skipped):
        entry["passed"] = False
    for key, value in report.user_properties:
        if key == "seconds":
            entry["seconds"] = value


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        status = "PASS" if entry["passed"] else "FAIL"
        timing = f" ({entry['seconds']:.2f} s)" if entry["seconds"] is not None else ""
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {entry['title']}{timing}")
