"""Shared pytest hooks.

The acceptance tests accumulate one verdict line per criterion; print them
as a block at the end of the run so the gate is readable at a glance.
"""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "RESULTS", [])
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
