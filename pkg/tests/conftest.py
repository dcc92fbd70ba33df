from __future__ import annotations

import numpy as np
import pytest

from plantreg.geometry import PointCloud, RigidTransform
from plantreg.synth import GrowthScenario, generate


def random_transform(rng: np.random.Generator, max_angle: float = np.pi, max_shift: float = 1.0) -> RigidTransform:
    axis = rng.normal(size=3)
    return RigidTransform.from_axis_angle(axis, rng.uniform(0, max_angle), rng.uniform(-max_shift, max_shift, 3))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def plant() -> PointCloud:
    """A colored 2000-point synthetic plant."""
    return generate(GrowthScenario(rng_seed=7, n_frames=1)).frames[0]


@pytest.fixture(scope="session")
def plant5k() -> PointCloud:
    return generate(GrowthScenario(rng_seed=11, n_frames=1, points_per_frame_base=5000)).frames[0]


def pytest_terminal_summary(terminalreporter) -> None:
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
    missing = sorted(set(range(1, 12)) - set(results))
    if missing:
        terminalreporter.write_line(f"not run: {', '.join(map(str, missing))}")
