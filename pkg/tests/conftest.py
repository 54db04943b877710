import hashlib
import math

import numpy as np
import pytest

from spsca import aes
from spsca.sampling import _meets, success_rate
from spsca.simulate import TraceSet

KEY = "000102030405060708090a0b0c0d0e0f"


def hd_oracle_traces(key=KEY, n=2000, seed=0):
    """Trace set whose power is exactly sum_j HD(ct[m], inv_sbox(ct[j] ^ lrk[j]))."""
    rng = np.random.default_rng(seed)
    pts = rng.integers(0, 256, size=(n, 16), dtype=np.uint8)
    pre, ct = aes.encrypt_batch(key, pts)
    power = aes.HW8[pre ^ ct].sum(axis=1).astype(np.float64)
    return TraceSet(key, pts, ct, pre, power)


@pytest.fixture
def oracle_pool():
    return hd_oracle_traces()


class BernoulliPool:
    """Mock attack: a subsample succeeds with probability ``curve(n)``, decided by a
    hash of its indices so that identical subsamples give identical outcomes."""

    def __init__(self, size, curve, salt=0):
        self.size, self.curve, self.salt = size, curve, salt
        self.calls = 0

    def __len__(self):
        return self.size

    def succeeds(self, idx):
        self.calls += 1
        h = hashlib.blake2b(np.asarray(idx, dtype=np.int64).tobytes(),
                            key=self.salt.to_bytes(8, "little"), digest_size=8).digest()
        return int.from_bytes(h, "little") / 2**64 < self.curve(len(idx))


def logistic(center, width):
    return lambda n: 1.0 / (1.0 + math.exp(-(n - center) / width))


def brute_force(pool, plan):
    """Thorough trials at every refined point of every coarse bracket, ascending."""
    grid = plan.coarse_grid()
    points, lo = set(), 1
    for c in grid:
        points.update(plan.refined_grid(lo, c))
        lo = c
    for n in sorted(points):
        pt = success_rate(pool, n, plan.thorough_trials, seed=plan.seed)
        if _meets(pt, plan.success_threshold):
            return n
    return None


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
