import math
import sys

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_convex_ring(rng: np.random.Generator, cx: float, cy: float, r: float, n: int | None = None):
    """Counter-clockwise convex polygon: sorted angles on a circle."""
    n = n or int(rng.integers(3, 9))
    ang = np.sort(rng.uniform(0, 2 * math.pi, n))
    while np.min(np.diff(np.concatenate([ang, [ang[0] + 2 * math.pi]]))) < 1e-3:
        ang = np.sort(rng.uniform(0, 2 * math.pi, n))
    return tuple((float(cx + r * math.cos(a)), float(cy + r * math.sin(a))) for a in ang)


def halfplane_contains(ring, x: float, y: float, tol: float = 1e-9) -> bool:
    """Independent oracle for counter-clockwise convex rings."""
    n = len(ring)
    for i in range(n):
        (x1, y1), (x2, y2) = ring[i], ring[(i + 1) % n]
        if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) < -tol:
            return False
    return True


def shoelace(ring) -> float:
    return 0.5 * abs(sum(x1 * y2 - x2 * y1 for (x1, y1), (x2, y2) in zip(ring, ring[1:] + ring[:1])))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "LINES", None):
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.LINES):
        terminalreporter.write_line(mod.LINES[k])
