import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_acceptance = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance[report.nodeid.split("::")[-1]] = report.passed


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    import test_acceptance as acc

    terminalreporter.section("acceptance criteria")
    for name, label in acc.CRITERIA.items():
        if name in _acceptance:
            verdict = "PASS" if _acceptance[name] else "FAIL"
            terminalreporter.write_line(f"{verdict}  {label}  [{acc.DETAILS.get(name, '')}]")
