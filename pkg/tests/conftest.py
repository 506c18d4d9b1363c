"""Shared pytest hooks for the test suite."""

import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # acceptance verdicts must survive output capture in any pytest mode
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", []) if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
