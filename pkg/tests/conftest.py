import pytest

from bodyfed.config import ScenarioConfig


@pytest.fixture
def small_cfg():
    """A quick federated scenario: 4 locations, few windows, few rounds."""
    cfg = ScenarioConfig(rounds=6)
    cfg.data.synthetic.windows_per_client = 40
    cfg.data.synthetic.heldout_per_client = 20
    return cfg


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert."""
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
