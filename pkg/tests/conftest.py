import numpy as np
import pytest

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict(request):
    """Record a one-line PASS/FAIL summary for an acceptance check, then assert it."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def check(number: int, title: str, ok: bool, detail: str) -> None:
        lines.append(f"{'PASS' if ok else 'FAIL'}  [{number:2d}] {title}: {detail}")
        assert ok, f"{title}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
