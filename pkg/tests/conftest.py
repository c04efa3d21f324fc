import numpy as np
import pytest
from hypothesis import settings

from insertbench.batch import ExperimentSpec

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def fast_spec(**overrides) -> ExperimentSpec:
    """Small, quick scene: 500 peg spheres, 8 mm target depth, 2 mm approach."""
    base = {
        "scene.peg.sphere_count": 500,
        "scene.target_depth": 0.008,
        "scene.hole.depth": 0.012,
        "scene.peg.height": 0.02,
        "uncertainty.start": [0.0, 0.0, 0.002, 0.0, 0.0, 0.0],
        "uncertainty.std": [5e-5, 5e-5, 0.0, 0.0, 0.0, 0.0],
        "uncertainty.tilt_deg": [0.5, 0.0, 0.0],
        "repetitions": 6,
        "seed": 1234,
        "topology.worker_mode": "thread",
        "topology.lease_timeout": 30.0,
        "output.plots": False,
    }
    base.update(overrides)
    return ExperimentSpec().with_overrides(base)


@pytest.fixture
def small_spec():
    return fast_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# acceptance bookkeeping: one PASS/FAIL line per criterion at the end of the run
CRITERIA: dict[int, tuple[bool, str, str]] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    CRITERIA[number] = (bool(ok), title, detail)
    print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, title, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
