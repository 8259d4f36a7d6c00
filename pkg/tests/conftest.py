import pytest

_labels = {}
_results = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            _labels[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    if report.nodeid not in _labels:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _results.get(report.nodeid)
        if prev is None or prev[0] == "PASS":
            status = "PASS" if report.outcome == "passed" else "FAIL"
            _results[report.nodeid] = (status, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, label in _labels.items():
        if nodeid in _results:
            status, dur = _results[nodeid]
            terminalreporter.write_line(f"{status}  {label}  ({dur:.2f}s)")
