import re


def pytest_runtest_logreport(report):
    """Print one status line per acceptance criterion as it completes."""
    if report.when != "call":
        return
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if m:
        status = "PASS" if report.passed else "FAIL"
        print(f"\n[criterion {int(m.group(1))}] {m.group(2)}: {status}",
              flush=True)
