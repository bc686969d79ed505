import pytest

_results: dict[int, list] = {}


def pytest_runtest_logreport(report):
    marks = dict(report.user_properties)
    if "criterion" not in marks:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _results.setdefault(marks["criterion"], []).append((status, marks.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        rows = _results[num]
        status = "FAIL" if any(s == "FAIL" for s, _ in rows) else rows[0][0]
        details = "; ".join(d for _, d in rows if d)
        terminalreporter.write_line(f"criterion {num:>2}: {status}  {details}")


@pytest.fixture
def criterion(request, record_property):
    """Tag an acceptance test; ``criterion.detail(text)`` attaches a summary."""
    num = request.node.get_closest_marker("acceptance").args[0]
    record_property("criterion", num)

    class Recorder:
        def detail(self, text):
            record_property("detail", text)

    return Recorder()
