import os
from pathlib import Path

import pytest

ACCEPTANCE_LINES: list[str] = []

# fall back to <repo>/data/mnist when the variable is unset
_DEFAULT_DATA = Path(__file__).resolve().parents[1] / "data" / "mnist"
if "POSTHOC_BANDIT_DATA" not in os.environ and _DEFAULT_DATA.is_dir():
    os.environ["POSTHOC_BANDIT_DATA"] = str(_DEFAULT_DATA)


@pytest.fixture
def report():
    def _report(number: int, passed: bool, text: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
