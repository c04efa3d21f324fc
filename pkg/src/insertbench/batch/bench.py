"""Stepping throughput for each sphere count listed in a spec."""
from __future__ import annotations

from dataclasses import dataclass

from ..core import ContactParams, ValidationError
from ..sim import bench_steps, derive_contact_gains
from .spec import ExperimentSpec


@dataclass(frozen=True)
class BenchRow:
    sphere_count: int
    steps: int
    elapsed: float
    steps_per_s: float
    mean_contacts: float


def run_bench(spec: ExperimentSpec, steps: int = 1000, repeats: int = 5, params: ContactParams | None = None) -> list[BenchRow]:
    """Time `steps` pure physics steps per configured sphere count.

    Contact parameters default to the midpoint of the experiment's randomization
    ranges. A short warm-up run precedes the measurements.
    """
    if int(steps) < 1:
        raise ValidationError("steps must be >= 1")
    if params is None:
        r = spec.randomization
        params = ContactParams(
            time_constant=sum(r.time_constant) / 2,
            damping_ratio=sum(r.damping_ratio) / 2,
            impedance=sum(r.impedance) / 2,
            sliding_friction=sum(r.sliding_friction) / 2,
        )
    gains = derive_contact_gains(params, spec.sim.effective_mass)
    scenes = [(int(n), spec.with_overrides({"scene.peg.sphere_count": int(n)}).scene_spec(roughness_rng=spec.seed)) for n in spec.scene.bench_sphere_counts]
    for _, scene in scenes:
        bench_steps(scene, gains, min(int(steps), 200), params.sliding_friction, repeats=1)
    rows = []
    for n, scene in scenes:
        elapsed, rate, contacts = bench_steps(scene, gains, int(steps), params.sliding_friction, repeats=repeats)
        rows.append(BenchRow(n, int(steps), elapsed, rate, contacts))
    return rows
