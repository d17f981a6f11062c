import re

CRIT = re.compile(r"test_acceptance\.py::(?:\w+::)?test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    rows = {}
    for status in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            m = CRIT.search(getattr(rep, "nodeid", ""))
            if m and getattr(rep, "when", "call") in ("call", "setup"):
                rows.setdefault(int(m.group(1)), (m.group(2), status))
    if not rows:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(rows):
        name, status = rows[num]
        word = "PASS" if status == "passed" else status.upper()
        terminalreporter.write_line(f"criterion {num:02d} {word:4s} {name}")
