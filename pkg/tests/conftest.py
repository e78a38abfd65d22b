import re

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not match:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        outcome = "PASS" if report.outcome == "passed" else "FAIL"
        _CRITERIA[int(match.group(1))] = (match.group(2), outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        name, outcome, detail = _CRITERIA[n]
        line = f"criterion {n:2d} {name:<24} {outcome}"
        terminalreporter.write_line(f"{line}  {detail}" if detail else line)
