import time

import pytest

_LINES = []


class CriterionReport:
    """Collects one pass/fail line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def finish(self, passed: bool, detail: str):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {self.number:>2} {status}: {self.title} | {detail} | {self.elapsed():.1f}s"
        _LINES.append((self.number, line))
        print(line)
        return passed


@pytest.fixture
def criterion():
    return CriterionReport


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
