import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# (criterion number, passed, one-line detail), filled in by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number:>2}: {detail}")
