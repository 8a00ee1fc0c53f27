"""Shared pytest wiring: one pass/fail line per acceptance criterion."""


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in tr.stats.get(outcome, []):
            if "test_acceptance" in rep.nodeid and rep.when == "call":
                rows.append((rep.nodeid.split("::")[-1], rep.passed))
    if not rows:
        return
    tr.write_sep("-", "acceptance criteria")
    for name, ok in sorted(rows):
        tr.write_line(f"{name}: {'pass' if ok else 'FAIL'}")
