import re

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from spinvo.geometry import PoseSE3


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    results = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            m = re.search(r"test_acceptance.*test_criterion_(\d+)", nodeid)
            if m and getattr(rep, "when", "call") == "call":
                results[int(m.group(1))] = "PASS" if status == "passed" else "FAIL"
    for rep in terminalreporter.stats.get("skipped", []):
        nodeid = getattr(rep, "nodeid", "")
        m = re.search(r"test_acceptance.*test_criterion_(\d+)", nodeid)
        if m:
            results.setdefault(int(m.group(1)), "SKIP")
    if results:
        terminalreporter.write_line("")
        for n in sorted(results):
            terminalreporter.write_line(f"acceptance criterion {n:2d}: {results[n]}")


def random_rotation(rng) -> np.ndarray:
    """Uniform random rotation via scipy (test-side oracle machinery)."""
    return Rotation.random(random_state=np.random.RandomState(rng.integers(2**31))).as_matrix()


def random_pose(rng, t_scale: float = 5.0) -> PoseSE3:
    return PoseSE3(random_rotation(rng), rng.uniform(-t_scale, t_scale, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
