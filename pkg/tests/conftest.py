"""Repeat the acceptance verdict lines after the run, outside capture.

The acceptance tests print one ``ACCEPTANCE n (...): PASS/FAIL`` line each;
under default capture those prints are swallowed for passing tests. This hook
replays them in a closing section so every invocation shows the verdicts.
"""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    module = (sys.modules.get("test_acceptance")
              or sys.modules.get("tests.test_acceptance"))
    lines = getattr(module, "VERDICT_LINES", None) if module else None
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in lines:
            terminalreporter.write_line(line)
