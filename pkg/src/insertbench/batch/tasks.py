"""Task generation, shuffling and execution of a single task."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..control import (
    AdmittanceController,
    AdmittanceGains,
    LocalPolicyChannel,
    POLICIES,
    PolicyController,
    PositionController,
    RemotePolicyClient,
)
from ..core import ContactParams, Pose6, RngStream, TrialResult, ValidationError, as_generator, sample_pose
from ..sim import ROUGHNESS_STREAM, SceneSpec, run_trial
from .spec import ExperimentSpec

# sub-keys of the per-task sampling stream
POSE_STREAM = 10
PARAM_STREAM = 11
SEED_STREAM = 12


@dataclass(frozen=True, eq=False)
class Task:
    task_id: str
    index: int
    seed: int
    start_pose: Pose6
    contact_params: ContactParams

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "index": self.index,
            "seed": self.seed,
            "start_pose": self.start_pose.as_array().tolist(),
            "contact_params": self.contact_params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Task":
        return cls(
            task_id=str(d["task_id"]),
            index=int(d["index"]),
            seed=int(d["seed"]),
            start_pose=Pose6.from_array(d["start_pose"]),
            contact_params=ContactParams(**d["contact_params"]),
        )

    def __eq__(self, other):
        if not isinstance(other, Task):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def task_id_for(index: int) -> str:
    return f"t{index:06d}"


def _uniform(gen: np.random.Generator, bounds) -> float:
    lo, hi = float(bounds[0]), float(bounds[1])
    if lo == hi:
        return lo
    return float(gen.uniform(lo, hi))


def generate_tasks(spec: ExperimentSpec) -> list[Task]:
    """K tasks, each sampled from its own stream (master_seed, index)."""
    if spec.repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    dist = spec.pose_distribution()
    r = spec.randomization
    tasks = []
    for i in range(spec.repetitions):
        stream = RngStream(spec.seed, i)
        pose = sample_pose(dist, stream.generator(POSE_STREAM))
        g = stream.generator(PARAM_STREAM)
        params = ContactParams(
            time_constant=_uniform(g, r.time_constant),
            damping_ratio=_uniform(g, r.damping_ratio),
            impedance=_uniform(g, r.impedance),
            sliding_friction=_uniform(g, r.sliding_friction),
        )
        tasks.append(Task(task_id_for(i), i, stream.derive_seed(SEED_STREAM), pose, params))
    return tasks


def shuffle_tasks(tasks, rng) -> list[Task]:
    """Deterministic permutation of the task list."""
    tasks = list(tasks)
    order = as_generator(rng).permutation(len(tasks))
    return [tasks[i] for i in order]


def make_controller(spec: ExperimentSpec, policy_channel=None):
    c = spec.controller
    if c.type == "position":
        return PositionController(c.speed_limit)
    if c.type == "admittance":
        a = c.admittance
        gains = AdmittanceGains.with_target_force(a.target_force, M=np.asarray(a.M, float), D=np.asarray(a.D, float), C=np.asarray(a.C, float))
        return AdmittanceController(gains)
    p = c.policy
    if policy_channel is None:
        if p.name not in POLICIES:
            raise ValidationError(f"unknown policy {p.name!r}; available: {', '.join(POLICIES)}")
        policy_channel = LocalPolicyChannel(POLICIES[p.name]())
    return PolicyController(policy_channel, p.control_period, p.clamp_translation, p.clamp_rotation)


def task_scene(spec: ExperimentSpec, task: Task) -> SceneSpec:
    """Scene for one task; roughness, when configured, is drawn from the task's own stream."""
    rng = RngStream(task.seed).generator(ROUGHNESS_STREAM)
    return spec.scene_spec(roughness_rng=rng)


def execute_task(spec: ExperimentSpec, task: Task, policy_channel=None, scene: SceneSpec | None = None) -> TrialResult:
    """Run one task. The result depends only on (spec, task), never on the
    worker that runs it."""
    if scene is None:
        scene = task_scene(spec, task)
    controller = make_controller(spec, policy_channel)
    return run_trial(
        scene,
        task.contact_params,
        controller,
        task.start_pose,
        spec.sim_config(),
        rng=RngStream(task.seed),
        trial_id=task.task_id,
        seed=task.seed,
    )


def run_sequential(spec: ExperimentSpec, tasks=None, policy_channel=None) -> list[TrialResult]:
    """Single-worker, in-process execution without any networking."""
    tasks = generate_tasks(spec) if tasks is None else tasks
    return [execute_task(spec, t, policy_channel) for t in tasks]


def remote_channel(spec: ExperimentSpec, endpoint: str) -> RemotePolicyClient:
    return RemotePolicyClient(endpoint, deadline=spec.controller.policy.deadline)
