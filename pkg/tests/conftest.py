import os

ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str, elapsed: float,
                     budget: float):
    line = (f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} "
            f"[{elapsed:7.1f}s / budget {budget:.0f}s] {detail}")
    ACCEPTANCE_LINES.append((number, line))
    print(f"\n{line}", flush=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
    out = os.environ.get("DYNOPF_ACCEPTANCE_REPORT", "acceptance_report.txt")
    try:
        with open(out, "w") as f:
            for _, line in sorted(ACCEPTANCE_LINES):
                f.write(line + "\n")
    except OSError:
        pass
