"""Shared pytest hooks: surface the acceptance criterion lines in every run."""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from . import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "ANNOUNCED", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
