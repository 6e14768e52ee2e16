"""Shared pytest wiring for the suite.

The acceptance tests record one verdict line per criterion; this hook echoes
them after the run so the per-criterion results are visible regardless of
output capturing.
"""

_ACCEPTANCE_LINES = []


def record_acceptance(line):
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
