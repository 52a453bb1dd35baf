import pytest

from dagacfl.config import config_from_dict


@pytest.fixture
def make_cfg():
    def build(**raw):
        return config_from_dict(raw)
    return build


ACCEPTANCE = {}


def record(criterion: int, passed: bool | None, detail: str):
    """Store one acceptance line; ``passed=None`` marks a skipped criterion."""
    ACCEPTANCE[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
