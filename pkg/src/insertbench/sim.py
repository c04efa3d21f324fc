"""Quasi-static peg-in-hole contact simulation.

The hole frame has its top surface in the z=0 plane and the bore axis along
+z; the bore occupies z in (-depth, 0]. The end-effector frame sits at the
peg tip (bottom-face centre) with the peg extending along its local +z.

The plant is kinematic: the commanded twist is tracked exactly and contact
forces are only measured. Each peg sphere centre acts as a surface probe;
its penetration into the hole material is the distance it must travel to
leave the material. The sensor reports the wrench the peg exerts on the
environment, i.e. the negative of the summed contact wrench acting on the
peg, taken about the tip.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from .core import (
    ContactParams,
    Pose6,
    RngStream,
    TrialResult,
    ValidationError,
    Wrench,
    WrenchSeries,
    add_repeatability_error,
    as_generator,
    euler_to_matrix,
    wrap_angle,
)
from .decomp import (
    CylinderSpec,
    RoughnessSpec,
    SphereSet,
    apply_roughness,
    decompose_cylinder_lateral,
    hole_surface_spheres,
)

# stream sub-keys for per-trial randomness
NOISE_STREAM = 1
ROUGHNESS_STREAM = 2
REPEATABILITY_STREAM = 3


class SimFault(RuntimeError):
    """Non-recoverable simulation input, e.g. a NaN twist."""


class ControllerFault(RuntimeError):
    """A controller could not produce a command; the trial fails."""


@dataclass(frozen=True, eq=False)
class SceneSpec:
    peg: CylinderSpec
    peg_spheres: SphereSet
    bore_radius: float
    bore_depth: float
    target_depth: float
    hole_spheres: SphereSet | None = None

    def __post_init__(self):
        if self.bore_radius < self.peg.radius:
            raise ValidationError("bore_radius must be >= peg radius (clearance >= 0)")
        if not self.bore_depth > 0:
            raise ValidationError("bore_depth must be > 0")
        if not 0 < self.target_depth <= self.bore_depth:
            raise ValidationError("target_depth must lie in (0, bore_depth]")

    @property
    def clearance(self) -> float:
        return self.bore_radius - self.peg.radius


def build_scene(
    peg_radius: float = 0.01,
    peg_height: float = 0.04,
    clearance: float = 0.5e-3,
    bore_depth: float = 0.04,
    target_depth: float = 0.03,
    sphere_count: int = 2000,
    sphere_radius: float = 1e-3,
    roughness: RoughnessSpec = RoughnessSpec(),
    rng=None,
    hole_sphere_count: int = 0,
    hole_roughness: RoughnessSpec = RoughnessSpec(),
) -> SceneSpec:
    """Scene with a sphere-decomposed cylindrical peg and an analytic (or
    optionally sphere-tiled) bore."""
    peg = CylinderSpec(peg_radius, peg_height)
    spheres = decompose_cylinder_lateral(peg, sphere_count, sphere_radius)
    gen = as_generator(rng if rng is not None else 0)
    if roughness.Ra > 0:
        spheres = apply_roughness(spheres, roughness, rng=gen)
    hole = None
    bore = peg_radius + clearance
    if hole_sphere_count:
        hole = hole_surface_spheres(bore, bore_depth, hole_sphere_count, sphere_radius)
        if hole_roughness.Ra > 0:
            hole = apply_roughness(hole, hole_roughness, rng=gen)
    return SceneSpec(peg, spheres, bore, bore_depth, target_depth, hole)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    effective_mass: float = 50.0
    force_abort_limit: float = 50.0
    time_limit: float = 20.0
    sensor_noise_std: tuple[float, float] = (0.05, 0.002)
    repeatability_std: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be > 0")
        if not self.effective_mass > 0:
            raise ValidationError("effective_mass must be > 0")
        if not self.force_abort_limit > 0 or not self.time_limit > 0:
            raise ValidationError("limits must be > 0")
        noise = tuple(float(v) for v in np.broadcast_to(np.asarray(self.sensor_noise_std, dtype=float), (2,)))
        if min(noise) < 0:
            raise ValidationError("sensor_noise_std must be >= 0")
        object.__setattr__(self, "sensor_noise_std", noise)
        if self.repeatability_std < 0:
            raise ValidationError("repeatability_std must be >= 0")


@dataclass(frozen=True)
class ContactGains:
    stiffness: float
    damping: float


@dataclass(frozen=True, eq=False)
class ContactPoint:
    position: np.ndarray
    normal: np.ndarray
    penetration: float
    relative_velocity: np.ndarray


@dataclass(frozen=True, eq=False)
class SimState:
    ee_pose: Pose6
    ee_twist: np.ndarray = field(default_factory=lambda: np.zeros(6))
    time: float = 0.0
    last_wrench: Wrench = field(default_factory=Wrench.zero)
    contact_count: int = 0
    abort: str = ""


def derive_contact_gains(params: ContactParams, effective_mass: float) -> ContactGains:
    """Mass-spring-damper analog of a (time constant, damping ratio) pair,
    scaled by the impedance."""
    k = effective_mass / params.time_constant**2
    b = 2.0 * params.damping_ratio * effective_mass / params.time_constant
    return ContactGains(params.impedance * k, params.impedance * b)


class ContactSet:
    """Vectorised contacts: one row per penetrating probe."""

    __slots__ = ("points", "normals", "penetration", "velocity")

    def __init__(self, points, normals, penetration, velocity):
        self.points = points
        self.normals = normals
        self.penetration = penetration
        self.velocity = velocity

    def __len__(self):
        return self.penetration.shape[0]

    def as_list(self) -> list[ContactPoint]:
        return [
            ContactPoint(self.points[i].copy(), self.normals[i].copy(), float(self.penetration[i]), self.velocity[i].copy())
            for i in range(len(self))
        ]


def _empty_contacts() -> ContactSet:
    z3 = np.zeros((0, 3))
    return ContactSet(z3, z3, np.zeros(0), z3)


class ContactModel:
    """Per-scene precomputation plus broad and narrow phase.

    Broad phase buckets peg spheres by their local height: spheres are kept
    sorted by local z, and only the prefix that can reach below the hole's
    top plane is transformed and tested.
    """

    def __init__(self, scene: SceneSpec):
        self.scene = scene
        local = scene.peg_spheres.centers
        order = np.argsort(local[:, 2], kind="stable")
        self.local = np.ascontiguousarray(local[order])
        self.local_z = self.local[:, 2].copy()
        self.lateral = float(np.max(np.hypot(self.local[:, 0], self.local[:, 1])))
        # bottom-rim probes are the only ones that can land on the top face;
        # side probes meet the bore rim edge-on, which pushes them radially
        band = float(np.max(scene.peg_spheres.radii))
        self.rim = self.local_z <= self.local_z[0] + band
        self.R = scene.bore_radius
        self.D = scene.bore_depth
        self._tree = None
        if scene.hole_spheres is not None:
            from scipy.spatial import cKDTree

            self._tree = cKDTree(scene.hole_spheres.centers)
            self._hole_c = scene.hole_spheres.centers
            n = scene.hole_spheres.normals
            if n is None:
                c = scene.hole_spheres.centers
                d = np.hypot(c[:, 0], c[:, 1])
                n = -np.column_stack([c[:, 0] / d, c[:, 1] / d, np.zeros(len(d))])
            self._hole_n = n

    def candidates(self, position: np.ndarray, rot: np.ndarray) -> int:
        """Number of leading (lowest) spheres that may lie below z=0."""
        r22 = rot[2, 2]
        if r22 <= 1e-6:
            return self.local.shape[0]
        lat = math.hypot(rot[2, 0], rot[2, 1]) * self.lateral
        z_max = (lat - position[2]) / r22
        return int(np.searchsorted(self.local_z, z_max + 1e-12, side="right"))

    def detect(self, position: np.ndarray, rot: np.ndarray, twist: np.ndarray) -> ContactSet:
        k = self.candidates(position, rot)
        if k == 0:
            return _empty_contacts()
        rel = self.local[:k] @ rot.T
        p = rel + position
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        below = z < 0.0
        if not below.any():
            return _empty_contacts()
        idx = np.nonzero(below)[0]
        p, rel = p[idx], rel[idx]
        rim = self.rim[idx]
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        d = np.hypot(x, y)
        R, D = self.R, self.D
        n = np.zeros_like(p)
        pen = np.zeros(len(idx))

        if self._tree is None:
            wall_pen = d - R
            safe = np.where(d > 0, d, 1.0)
            wall_n = -np.column_stack([x / safe, y / safe, np.zeros_like(x)])
        else:
            _, j = self._tree.query(p)
            hn = self._hole_n[j]
            wall_pen = -np.einsum("ij,ij->i", p - self._hole_c[j], hn)
            wall_n = hn

        top_pen = -z
        in_plate = (wall_pen > 0) & (z > -D)
        use_top = in_plate & rim & (top_pen <= wall_pen)
        use_wall = in_plate & ~use_top
        pen[use_top] = top_pen[use_top]
        n[use_top, 2] = 1.0
        pen[use_wall] = wall_pen[use_wall]
        n[use_wall] = wall_n[use_wall]

        floor = z <= -D
        on_floor = floor & (wall_pen <= 0)
        pen[on_floor] = (-D - z)[on_floor]
        n[on_floor, 2] = 1.0
        corner = floor & (wall_pen > 0)
        if corner.any():
            # inside the material beside the floor: escape upward or toward the bore's bottom edge
            dz = -D - z[corner]
            dr = wall_pen[corner]
            edge = np.hypot(dr, dz)
            up = top_pen[corner]
            go_up = rim[corner] & (up <= edge)
            cpen = np.where(go_up, up, edge)
            cn = np.zeros((corner.sum(), 3))
            cn[go_up, 2] = 1.0
            w = ~go_up
            cn[w] = (wall_n[corner][w] * dr[w, None] + np.array([0.0, 0.0, 1.0]) * dz[w, None]) / edge[w, None]
            pen[corner] = cpen
            n[corner] = cn

        hit = pen > 0
        if not hit.any():
            return _empty_contacts()
        rel, p, n, pen = rel[hit], p[hit], n[hit], pen[hit]
        vel = twist[:3] + np.cross(twist[3:], rel)
        return ContactSet(p, n, pen, vel)


def contact_forces(cs: ContactSet, gains: ContactGains, friction: float) -> np.ndarray:
    """Per-contact force on the peg (rows)."""
    if len(cs) == 0:
        return np.zeros((0, 3))
    vn = np.einsum("ij,ij->i", cs.velocity, cs.normals)
    fn = np.maximum(0.0, gains.stiffness * cs.penetration - gains.damping * vn)
    vt = cs.velocity - vn[:, None] * cs.normals
    speed = np.linalg.norm(vt, axis=1)
    ft_mag = np.minimum(gains.damping * speed, friction * fn)
    scale = np.divide(ft_mag, speed, out=np.zeros_like(speed), where=speed > 0)
    return fn[:, None] * cs.normals - scale[:, None] * vt


def contact_force(cp: ContactPoint, gains: ContactGains, friction: float) -> np.ndarray:
    """Force on the peg from one contact: spring-damper normal force, never
    attractive, plus viscous friction capped by the Coulomb limit."""
    cs = ContactSet(
        np.asarray(cp.position, dtype=float)[None, :],
        np.asarray(cp.normal, dtype=float)[None, :],
        np.array([float(cp.penetration)]),
        np.asarray(cp.relative_velocity, dtype=float)[None, :],
    )
    return contact_forces(cs, gains, friction)[0]


def measured_wrench(cs: ContactSet, forces: np.ndarray, tip: np.ndarray) -> np.ndarray:
    """Wrench the peg exerts on the environment, about the tip."""
    if len(cs) == 0:
        return np.zeros(6)
    f = forces.sum(axis=0)
    t = np.cross(cs.points - tip, forces).sum(axis=0)
    return -np.concatenate([f, t])


_MODEL_CACHE: dict[int, ContactModel] = {}


def _model_for(scene: SceneSpec) -> ContactModel:
    m = _MODEL_CACHE.get(id(scene))
    if m is None or m.scene is not scene:
        m = ContactModel(scene)
        if len(_MODEL_CACHE) > 64:
            _MODEL_CACHE.clear()
        _MODEL_CACHE[id(scene)] = m
    return m


def detect_contacts(state: SimState, scene: SceneSpec) -> list[ContactPoint]:
    pose = state.ee_pose
    return _model_for(scene).detect(pose.position, pose.rotation(), np.asarray(state.ee_twist, dtype=float)).as_list()


class Simulator:
    """Mutable single-trial stepping engine. One instance per trial/thread."""

    def __init__(self, scene: SceneSpec, gains: ContactGains, friction: float, cfg: SimConfig, start: Pose6, noise_rng=None, model: ContactModel | None = None):
        self.scene = scene
        self.gains = gains
        self.friction = float(friction)
        self.cfg = cfg
        self.model = model or ContactModel(scene)
        self.position = start.position.copy()
        self.orientation = start.orientation.copy()
        self.twist = np.zeros(6)
        self.time = 0.0
        self.steps = 0
        self.contact_count = 0
        self.noise = as_generator(noise_rng) if noise_rng is not None else None
        self._noise_std = np.repeat(np.asarray(cfg.sensor_noise_std, dtype=float), 3)
        self._noisy = bool(np.any(self._noise_std > 0)) and self.noise is not None

    @property
    def depth(self) -> float:
        return -float(self.position[2])

    def pose(self) -> Pose6:
        return Pose6(self.position, self.orientation)

    def measure(self) -> np.ndarray:
        """Contact wrench at the current pose plus sensor noise."""
        rot = euler_to_matrix(self.orientation)
        cs = self.model.detect(self.position, rot, self.twist)
        self.contact_count = len(cs)
        w = measured_wrench(cs, contact_forces(cs, self.gains, self.friction), self.position)
        if self._noisy:
            w = w + self.noise.standard_normal(6) * self._noise_std
        return w

    def advance(self, twist) -> np.ndarray:
        twist = np.asarray(twist, dtype=float)
        if twist.shape != (6,) or not np.all(np.isfinite(twist)):
            raise SimFault("commanded twist must be 6 finite values")
        dt = self.cfg.dt
        self.twist = twist
        self.position = self.position + twist[:3] * dt
        self.orientation = self.orientation + twist[3:] * dt
        self.steps += 1
        self.time = self.steps * dt
        return self.measure()


def step(state: SimState, scene: SceneSpec, gains: ContactGains, friction: float, commanded_twist, cfg: SimConfig, rng=None) -> tuple[SimState, Wrench]:
    """Advance one timestep. `rng` drives sensor noise; omit it for a noise-free step."""
    sim = Simulator(scene, gains, friction, cfg, state.ee_pose, rng, model=_model_for(scene))
    sim.steps = int(round(state.time / cfg.dt))
    w = sim.advance(commanded_twist)
    sim.time = state.time + cfg.dt
    wrench = Wrench.from_array(w)
    abort = state.abort
    if not abort and float(np.linalg.norm(w[:3])) > cfg.force_abort_limit:
        abort = "force abort"
    elif not abort and sim.time > cfg.time_limit:
        abort = "timeout"
    new = SimState(
        ee_pose=Pose6(sim.position, wrap_angle(sim.orientation)),
        ee_twist=sim.twist.copy(),
        time=sim.time,
        last_wrench=wrench,
        contact_count=sim.contact_count,
        abort=abort,
    )
    return new, wrench


@dataclass(frozen=True)
class ControllerObservation:
    ee_pose: Pose6
    wrench: Wrench
    time: float


class Controller(Protocol):
    def reset(self, start: Pose6, goal: Pose6, dt: float, trial_id: str = "") -> None: ...

    def __call__(self, obs: ControllerObservation) -> np.ndarray: ...


GOAL_OVERSHOOT = 0.5e-3


def run_trial(
    scene: SceneSpec,
    params: ContactParams,
    controller: Controller,
    start: Pose6,
    cfg: SimConfig,
    rng: RngStream | int = 0,
    trial_id: str = "",
    seed: int | None = None,
) -> TrialResult:
    """Run one insertion until success, force abort, timeout or controller fault.

    The controller's goal lies vertically below the start pose (its belief
    about the hole), `GOAL_OVERSHOOT` beyond the target depth so it crosses
    the success threshold, optionally perturbed by the robot's repeatability.
    """
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    gains = derive_contact_gains(params, cfg.effective_mass)
    goal = Pose6(
        [start.position[0], start.position[1], -(scene.target_depth + GOAL_OVERSHOOT)],
        start.orientation,
    )
    if cfg.repeatability_std > 0:
        goal = add_repeatability_error(goal, cfg.repeatability_std, stream.generator(REPEATABILITY_STREAM))
    sim = Simulator(scene, gains, params.sliding_friction, cfg, start, stream.generator(NOISE_STREAM))
    controller.reset(start, goal, cfg.dt, trial_id)

    samples = [sim.measure()]
    reason = ""
    success = False
    n_max = int(math.floor(cfg.time_limit / cfg.dt + 1e-9))
    while True:
        if sim.depth >= scene.target_depth:
            success = True
            break
        if sim.steps >= n_max:
            reason = "timeout"
            break
        obs = ControllerObservation(sim.pose(), Wrench.from_array(samples[-1]), sim.time)
        try:
            twist = np.asarray(controller(obs), dtype=float)
        except ControllerFault as exc:
            reason = str(exc) or "controller fault"
            break
        try:
            w = sim.advance(twist)
        except SimFault as exc:
            reason = f"fault: {exc}"
            break
        samples.append(w)
        if math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]) > cfg.force_abort_limit:
            reason = "force abort"
            break

    data = np.array(samples)
    series = WrenchSeries(data, cfg.dt, trial_id)
    fmax = float(np.max(np.linalg.norm(data[:, :3], axis=1)))
    return TrialResult(
        trial_id=trial_id,
        success=success,
        duration=sim.time,
        wrench_series=series,
        max_force_magnitude=fmax,
        start_pose=start,
        contact_params=params,
        seed=int(stream.master_seed if seed is None else seed),
        final_depth=sim.depth,
        failure_reason=reason,
    )


def write_series_csv(series: WrenchSeries, path) -> None:
    """Dump a wrench series as `t,fx,fy,fz,tx,ty,tz` (SI units)."""
    t = series.times()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,fx,fy,fz,tx,ty,tz\n")
        for ti, row in zip(t, series.data):
            fh.write(",".join(repr(float(v)) for v in (ti, *row)) + "\n")


def read_series_csv(path, trial_id: str | None = None) -> WrenchSeries:
    """Parse a `t,fx,fy,fz,tx,ty,tz` file. The sampling interval is taken
    from the time column and must be uniform."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and parts[0].lower() == "t":
                continue
            if len(parts) != 7:
                raise ValidationError(f"{path}: line {lineno}: expected 7 columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ValidationError(f"{path}: line {lineno}: non-numeric value") from None
    if not rows:
        raise ValidationError(f"{path}: no samples")
    arr = np.array(rows)
    if len(arr) >= 2:
        steps = np.diff(arr[:, 0])
        dt = float(steps.mean())
        if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6 * max(dt, 1e-12) + 1e-12:
            raise ValidationError(f"{path}: time column is not uniformly increasing")
    else:
        dt = 1.0
    return WrenchSeries(arr[:, 1:], dt, trial_id if trial_id is not None else str(path))


def bench_steps(scene: SceneSpec, gains: ContactGains, n_steps: int, friction: float = 0.3, cfg: SimConfig | None = None, start: Pose6 | None = None, twist=None, repeats: int = 3) -> tuple[float, float, float]:
    """Time pure stepping with a fixed twist: (elapsed s, steps/s, mean contacts).

    By default the peg starts 1 mm above the target depth with a 1 degree
    tilt and descends at 1 mm/s, so the entrance edge is in contact.
    Elapsed time is the best of `repeats` runs.
    """
    if int(n_steps) < 1:
        raise ValidationError("n_steps must be >= 1")
    cfg = cfg or SimConfig(sensor_noise_std=(0.0, 0.0))
    if start is None:
        start = Pose6([0.0, 0.0, -scene.target_depth + 1e-3], [math.radians(1.0), 0.0, 0.0])
    twist = np.array([0, 0, -1e-3, 0, 0, 0], dtype=float) if twist is None else np.asarray(twist, dtype=float)
    model = ContactModel(scene)
    best = math.inf
    counts = 0.0
    for _ in range(max(1, int(repeats))):
        sim = Simulator(scene, gains, friction, cfg, start, None, model=model)
        total = 0
        t0 = time.perf_counter()
        for _ in range(int(n_steps)):
            sim.advance(twist)
            total += sim.contact_count
        best = min(best, time.perf_counter() - t0)
        counts = total / int(n_steps)
    return best, int(n_steps) / best, counts
