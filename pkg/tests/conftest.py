import numpy as np
import pytest

from knnroc.data import Dataset


def make_dataset(rng, n, p=1, verify_rate=0.6, all_verified=False, integer=False):
    """Random three-class dataset with every class verified at least once.

    With ``integer`` features are small integers so distance ties are common.
    """
    cls = rng.integers(1, 4, size=n)
    cls[:3] = (1, 2, 3)
    if integer:
        t = rng.integers(0, 6, size=n).astype(float)
        a = rng.integers(0, 4, size=(n, p)).astype(float)
    else:
        t = cls + rng.normal(0, 1.0, n)
        a = cls[:, None] * 0.5 + rng.normal(0, 1.0, (n, p))
    if all_verified:
        v = np.ones(n, dtype=int)
    else:
        v = (rng.random(n) < verify_rate).astype(int)
        # keep each class represented and at least one unit unverified
        v[:6] = 1
        v[-1] = 0
    d = np.where(v == 1, cls, 0)
    return Dataset(t, a, v, d)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
