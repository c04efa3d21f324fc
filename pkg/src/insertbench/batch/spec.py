"""Experiment specification: YAML schema, validation and object builders.

Unknown keys are rejected at every level with the dotted path of the
offending key, e.g. ``scene.peg.radus``.
"""
from __future__ import annotations

import copy
import math
from dataclasses import MISSING, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..core import ContactParams, Pose6, PoseDistribution, ValidationError
from ..decomp import GAUSSIAN, RoughnessSpec
from ..metrics import DEFAULT_CUTOFF_HZ, FilterConfig
from ..sim import SceneSpec, SimConfig, build_scene

TOP_LEVEL_KEYS = ("scene", "controller", "uncertainty", "randomization", "repetitions", "sim", "topology", "seed", "output")
CONTROLLER_TYPES = ("position", "admittance", "policy")
WORKER_MODES = ("process", "thread")


class SpecError(ValidationError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass
class PegSection:
    radius: float = 0.01
    height: float = 0.04
    sphere_count: int = 2000
    sphere_radius: float = 1e-3


@dataclass
class HoleSection:
    clearance: float = 0.5e-3
    depth: float = 0.04
    sphere_count: int = 0


@dataclass
class RoughnessSection:
    Ra: float = 0.0
    distribution: str = GAUSSIAN
    apply_to: str = "peg"


@dataclass
class SceneSection:
    peg: PegSection = field(default_factory=PegSection)
    hole: HoleSection = field(default_factory=HoleSection)
    target_depth: float = 0.033
    roughness: RoughnessSection = field(default_factory=RoughnessSection)
    bench_sphere_counts: list = field(default_factory=lambda: [100, 500, 2000])


@dataclass
class AdmittanceSection:
    M: list = field(default_factory=lambda: [30.0, 30.0, 30.0, 0.05, 0.05, 0.05])
    D: list = field(default_factory=lambda: [200.0, 200.0, 500.0, 0.05, 0.05, 0.05])
    C: list = field(default_factory=lambda: [0.0] * 6)
    target_force: float = 5.0


@dataclass
class PolicySection:
    name: str = "scripted"
    control_period: float = 0.01
    deadline: float = 2.0
    clamp_translation: float = 2e-3
    clamp_rotation: float = math.radians(0.5)


@dataclass
class ControllerSection:
    type: str = "position"
    speed_limit: float = 0.01
    admittance: AdmittanceSection = field(default_factory=AdmittanceSection)
    policy: PolicySection = field(default_factory=PolicySection)


@dataclass
class UncertaintySection:
    start: list = field(default_factory=lambda: [0.0, 0.0, 0.005, 0.0, 0.0, 0.0])
    std: list = field(default_factory=lambda: [0.0] * 6)
    covariance: Any = None
    offset: list = field(default_factory=lambda: [0.0] * 6)
    tilt_deg: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    repeatability_std: float = 0.0


@dataclass
class RandomizationSection:
    time_constant: list = field(default_factory=lambda: [0.01, 0.5])
    damping_ratio: list = field(default_factory=lambda: [1.0, 1.0])
    impedance: list = field(default_factory=lambda: [0.001, 0.99])
    sliding_friction: list = field(default_factory=lambda: [0.1, 0.7])


@dataclass
class SimSection:
    dt: float = 1e-3
    effective_mass: float = 50.0
    force_abort_limit: float = 50.0
    time_limit: float = 20.0
    sensor_noise_force: float = 0.05
    sensor_noise_torque: float = 0.002


@dataclass
class TopologySection:
    sim_workers: int = 1
    policy_servers: int = 1
    lease_timeout: float = 60.0
    worker_mode: str = "process"


@dataclass
class OutputSection:
    dir: str = "results"
    histogram_bin: float = 1.0
    filter_cutoff_hz: float = DEFAULT_CUTOFF_HZ
    filter_enabled: bool = True
    dump_series: bool = False
    plots: bool = True


@dataclass
class ExperimentSpec:
    scene: SceneSection = field(default_factory=SceneSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    uncertainty: UncertaintySection = field(default_factory=UncertaintySection)
    randomization: RandomizationSection = field(default_factory=RandomizationSection)
    repetitions: int = 10
    sim: SimSection = field(default_factory=SimSection)
    topology: TopologySection = field(default_factory=TopologySection)
    seed: int = 0
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        validate(self)

    # builders -----------------------------------------------------------
    def scene_spec(self, roughness_rng=None) -> SceneSpec:
        s = self.scene
        rough = RoughnessSpec(s.roughness.Ra, s.roughness.distribution)
        peg_rough = rough if s.roughness.apply_to in ("peg", "both") else RoughnessSpec()
        hole_rough = rough if s.roughness.apply_to in ("hole", "both") else RoughnessSpec()
        return build_scene(
            peg_radius=s.peg.radius,
            peg_height=s.peg.height,
            clearance=s.hole.clearance,
            bore_depth=s.hole.depth,
            target_depth=s.target_depth,
            sphere_count=s.peg.sphere_count,
            sphere_radius=s.peg.sphere_radius,
            roughness=peg_rough,
            rng=roughness_rng,
            hole_sphere_count=s.hole.sphere_count,
            hole_roughness=hole_rough,
        )

    def sim_config(self) -> SimConfig:
        s = self.sim
        return SimConfig(
            dt=s.dt,
            effective_mass=s.effective_mass,
            force_abort_limit=s.force_abort_limit,
            time_limit=s.time_limit,
            sensor_noise_std=(s.sensor_noise_force, s.sensor_noise_torque),
            repeatability_std=self.uncertainty.repeatability_std,
        )

    def pose_distribution(self) -> PoseDistribution:
        u = self.uncertainty
        mean = np.asarray(u.start, dtype=float) + np.asarray(u.offset, dtype=float)
        mean[3:] += np.radians(np.asarray(u.tilt_deg, dtype=float))
        if u.covariance is not None:
            cov = np.asarray(u.covariance, dtype=float)
        else:
            cov = np.diag(np.asarray(u.std, dtype=float) ** 2)
        return PoseDistribution(Pose6.from_array(mean), cov)

    def filter_config(self) -> FilterConfig:
        return FilterConfig(self.output.filter_cutoff_hz, self.output.filter_enabled)

    def to_dict(self) -> dict:
        return _to_dict(self)

    def with_overrides(self, changes: dict) -> "ExperimentSpec":
        """Copy with dotted-path overrides, e.g. ``{"topology.sim_workers": 4}``."""
        d = self.to_dict()
        for dotted, value in changes.items():
            node = d
            keys = dotted.split(".")
            for k in keys[:-1]:
                node = node[k]
            node[keys[-1]] = value
        return from_dict(d)


def _to_dict(obj):
    if is_dataclass(obj):
        return {f.name: _to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_dict(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return copy.deepcopy(obj)


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise SpecError(path, f"expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            where = f"{path}.{key}" if path else str(key)
            raise SpecError(where, f"unknown key (allowed: {', '.join(known)})")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        value = data[name]
        sub = f"{path}.{name}" if path else name
        default = f.default_factory() if f.default_factory is not MISSING else f.default
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        else:
            kwargs[name] = _coerce(value, default, sub)
    try:
        return cls(**kwargs)
    except SpecError:
        raise
    except (TypeError, ValueError) as exc:
        raise SpecError(path, str(exc)) from None


def _coerce(value, default, path: str):
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise SpecError(path, "expected true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise SpecError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SpecError(path, f"expected a number, got {value!r}")
        if not math.isfinite(float(value)):
            raise SpecError(path, "must be finite")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise SpecError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise SpecError(path, f"expected a list, got {value!r}")
        return value
    return value


def _numbers(values, n: int | None, path: str) -> np.ndarray:
    try:
        arr = np.asarray(values, dtype=float)
    except (TypeError, ValueError):
        raise SpecError(path, "expected numbers") from None
    if arr.ndim != 1 or (n is not None and arr.shape[0] != n):
        raise SpecError(path, f"expected a list of {n} numbers")
    if not np.all(np.isfinite(arr)):
        raise SpecError(path, "values must be finite")
    return arr


def _range(values, path: str, lo_bound=None, hi_bound=None, open_bounds=False):
    arr = _numbers(values, 2, path)
    lo, hi = arr
    if lo > hi:
        raise SpecError(path, f"range must satisfy lo <= hi, got [{lo}, {hi}]")
    if lo_bound is not None and (lo <= lo_bound if open_bounds else lo < lo_bound):
        raise SpecError(path, f"lower bound out of range ({lo})")
    if hi_bound is not None and (hi >= hi_bound if open_bounds else hi > hi_bound):
        raise SpecError(path, f"upper bound out of range ({hi})")


def validate(spec: ExperimentSpec) -> None:
    s = spec.scene
    if not s.peg.radius > 0:
        raise SpecError("scene.peg.radius", "must be > 0")
    if not s.peg.height > 0:
        raise SpecError("scene.peg.height", "must be > 0")
    if s.peg.sphere_count < 1:
        raise SpecError("scene.peg.sphere_count", "must be >= 1")
    if not s.peg.sphere_radius > 0:
        raise SpecError("scene.peg.sphere_radius", "must be > 0")
    if s.hole.clearance < 0:
        raise SpecError("scene.hole.clearance", "must be >= 0")
    if not s.hole.depth > 0:
        raise SpecError("scene.hole.depth", "must be > 0")
    if s.hole.sphere_count < 0:
        raise SpecError("scene.hole.sphere_count", "must be >= 0")
    if not 0 < s.target_depth <= s.hole.depth:
        raise SpecError("scene.target_depth", "must lie in (0, scene.hole.depth]")
    if s.roughness.Ra < 0:
        raise SpecError("scene.roughness.Ra", "must be >= 0")
    if s.roughness.distribution not in ("gaussian", "uniform"):
        raise SpecError("scene.roughness.distribution", "must be 'gaussian' or 'uniform'")
    if s.roughness.apply_to not in ("peg", "hole", "both"):
        raise SpecError("scene.roughness.apply_to", "must be 'peg', 'hole' or 'both'")
    if not s.bench_sphere_counts or any((not isinstance(c, int)) or c < 1 for c in s.bench_sphere_counts):
        raise SpecError("scene.bench_sphere_counts", "must be a non-empty list of positive integers")

    c = spec.controller
    if c.type not in CONTROLLER_TYPES:
        raise SpecError("controller.type", f"must be one of {', '.join(CONTROLLER_TYPES)}")
    if not c.speed_limit > 0:
        raise SpecError("controller.speed_limit", "must be > 0")
    a = c.admittance
    M = _numbers(a.M, 6, "controller.admittance.M")
    if np.any(M <= 0):
        raise SpecError("controller.admittance.M", "entries must be > 0")
    if np.any(_numbers(a.D, 6, "controller.admittance.D") < 0):
        raise SpecError("controller.admittance.D", "entries must be >= 0")
    if np.any(_numbers(a.C, 6, "controller.admittance.C") < 0):
        raise SpecError("controller.admittance.C", "entries must be >= 0")
    p = c.policy
    if not p.control_period > 0:
        raise SpecError("controller.policy.control_period", "must be > 0")
    if not p.deadline > 0:
        raise SpecError("controller.policy.deadline", "must be > 0")
    if p.clamp_translation < 0 or p.clamp_rotation < 0:
        raise SpecError("controller.policy", "clamps must be >= 0")

    u = spec.uncertainty
    _numbers(u.start, 6, "uncertainty.start")
    _numbers(u.offset, 6, "uncertainty.offset")
    _numbers(u.tilt_deg, 3, "uncertainty.tilt_deg")
    if np.any(_numbers(u.std, 6, "uncertainty.std") < 0):
        raise SpecError("uncertainty.std", "entries must be >= 0")
    if u.repeatability_std < 0:
        raise SpecError("uncertainty.repeatability_std", "must be >= 0")
    try:
        spec.pose_distribution()
    except ValidationError as exc:
        raise SpecError("uncertainty.covariance" if u.covariance is not None else "uncertainty.std", str(exc)) from None

    r = spec.randomization
    _range(r.time_constant, "randomization.time_constant")
    if r.time_constant[0] <= 0:
        raise SpecError("randomization.time_constant", "must be > 0")
    _range(r.damping_ratio, "randomization.damping_ratio")
    if r.damping_ratio[0] <= 0:
        raise SpecError("randomization.damping_ratio", "must be > 0")
    _range(r.impedance, "randomization.impedance", 0.0, 1.0, open_bounds=True)
    _range(r.sliding_friction, "randomization.sliding_friction", lo_bound=0.0)

    if spec.repetitions < 1:
        raise SpecError("repetitions", "must be >= 1")
    if not 0 <= spec.seed < 2**64:
        raise SpecError("seed", "must be a 64-bit unsigned integer")
    try:
        spec.sim_config()
    except ValidationError as exc:
        raise SpecError("sim", str(exc)) from None
    t = spec.topology
    if t.sim_workers < 1:
        raise SpecError("topology.sim_workers", "must be >= 1")
    if t.policy_servers < 1:
        raise SpecError("topology.policy_servers", "must be >= 1")
    if not t.lease_timeout > 0:
        raise SpecError("topology.lease_timeout", "must be > 0")
    if t.worker_mode not in WORKER_MODES:
        raise SpecError("topology.worker_mode", f"must be one of {', '.join(WORKER_MODES)}")
    o = spec.output
    if not o.histogram_bin > 0:
        raise SpecError("output.histogram_bin", "must be > 0")
    if o.filter_enabled and not o.filter_cutoff_hz > 0:
        raise SpecError("output.filter_cutoff_hz", "must be > 0")


def from_dict(data: dict) -> ExperimentSpec:
    if not isinstance(data, dict):
        raise SpecError("", "experiment spec must be a mapping")
    return _build(ExperimentSpec, data, "")


def load_spec(path) -> ExperimentSpec:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecError("", f"invalid YAML: {exc}") from None
    return from_dict(data if data is not None else {})


def dump_spec(spec: ExperimentSpec, path) -> None:
    Path(path).write_text(yaml.safe_dump(spec.to_dict(), sort_keys=False), encoding="utf-8")
