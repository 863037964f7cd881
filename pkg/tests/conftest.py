import numpy as np
import pytest

from disguise_id.geom import KeypointSet


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_kps(rng, size=256, margin=20):
    return KeypointSet(rng.uniform(margin, size - 1 - margin, (14, 2)))


@pytest.fixture
def image(rng):
    return rng.random((256, 256, 3))


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the summary lists them at the end of the run."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
