def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance criterion PASS/FAIL lines after the test summary."""
    try:
        from test_acceptance import CRITERION_LINES
    except ImportError:
        return
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
