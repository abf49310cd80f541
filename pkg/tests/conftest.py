import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if m and report.when == "call":
        _ACCEPTANCE[int(m.group(1))] = (m.group(2), report.outcome)
    elif m and report.when == "setup" and report.outcome != "passed":
        _ACCEPTANCE[int(m.group(1))] = (m.group(2), report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for idx in sorted(_ACCEPTANCE):
        name, outcome = _ACCEPTANCE[idx]
        mark = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"criterion {idx:2d} [{name}]: {mark}")
