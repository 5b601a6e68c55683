import pytest

_ACCEPTANCE = []


class AcceptanceLog:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, name: str, passed: bool, detail: str, seconds: float, budget: float):
        timed = seconds <= budget
        ok = bool(passed) and timed
        line = (f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} "
                f"({seconds:.1f}s, budget {budget:.0f}s{'' if timed else ', OVER BUDGET'})")
        _ACCEPTANCE.append(line)
        print(line)
        return ok


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
