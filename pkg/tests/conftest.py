import sys
from pathlib import Path

CORPUS = Path(__file__).resolve().parents[1] / "corpus"

# pass/fail lines recorded by the acceptance tests; echoed after the
# pytest summary so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str):
    ACCEPTANCE_LINES.append(line)
    print(line, file=sys.stderr)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
