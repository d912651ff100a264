import sys


def pytest_runtest_logreport(report):
    """One pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        status = "PASS" if report.passed else "FAIL"
        sys.stderr.write(f"[acceptance] {name}: {status}\n")
