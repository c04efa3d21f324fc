"""Insertion controllers behind one callable interface.

A controller is reset with the start pose, its goal and the control
timestep, then maps a ControllerObservation to a commanded 6-twist
(m/s, rad/s). Wrenches follow the sensor convention of the simulator: the
wrench the peg applies to the environment.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Pose6, ValidationError, Wrench, wrap_angle
from .sim import ControllerFault, ControllerObservation
from . import wire

DEFAULT_MAX_LINEAR = 0.05
DEFAULT_MAX_ANGULAR = 0.5


def _clamp_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n > limit > 0:
        return v * (limit / n)
    return v


def clamp_twist(twist, max_linear: float = DEFAULT_MAX_LINEAR, max_angular: float = DEFAULT_MAX_ANGULAR) -> np.ndarray:
    t = np.asarray(twist, dtype=float).copy()
    if not np.all(np.isfinite(t)):
        raise ControllerFault("controller produced a non-finite twist")
    t[:3] = _clamp_norm(t[:3], max_linear)
    t[3:] = _clamp_norm(t[3:], max_angular)
    return t


def position_controller_step(obs: ControllerObservation, target: Pose6, speed_limit: float, gain: float = 10.0, angular_limit: float = 0.1, tolerance: float = 1e-6) -> np.ndarray:
    """Straight-line motion toward `target` ignoring the wrench.

    Velocity is proportional to the pose error with the translational part
    clamped to `speed_limit`; inside `tolerance` the twist is zero.
    """
    dp = target.position - obs.ee_pose.position
    dr = np.asarray(wrap_angle(target.orientation - obs.ee_pose.orientation), dtype=float)
    twist = np.zeros(6)
    if np.linalg.norm(dp) > tolerance:
        twist[:3] = _clamp_norm(gain * dp, speed_limit)
    if np.linalg.norm(dr) > tolerance:
        twist[3:] = _clamp_norm(gain * dr, angular_limit)
    return twist


class PositionController:
    def __init__(self, speed_limit: float = 0.01, gain: float = 10.0):
        if not speed_limit > 0:
            raise ValidationError("speed_limit must be > 0")
        self.speed_limit = speed_limit
        self.gain = gain
        self.goal: Pose6 | None = None

    def reset(self, start: Pose6, goal: Pose6, dt: float, trial_id: str = "") -> None:
        self.goal = goal

    def __call__(self, obs: ControllerObservation) -> np.ndarray:
        return clamp_twist(position_controller_step(obs, self.goal, self.speed_limit, self.gain))


def _diag6(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(6, float(arr))
    arr = arr.reshape(-1)
    if arr.shape != (6,):
        raise ValidationError(f"{name} needs 6 diagonal entries")
    return arr


@dataclass(frozen=True, eq=False)
class AdmittanceGains:
    """Diagonal virtual mass M, damping D, stiffness C and desired wrench w_d.

    The explicit update is stable against the environment only while
    dt * (D + total contact damping) / M < 2, hence the heavy default
    translational mass.
    """

    M: np.ndarray = field(default_factory=lambda: np.array([30.0, 30.0, 30.0, 0.05, 0.05, 0.05]))
    D: np.ndarray = field(default_factory=lambda: np.array([200.0, 200.0, 500.0, 0.05, 0.05, 0.05]))
    C: np.ndarray = field(default_factory=lambda: np.zeros(6))
    w_d: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -5.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        M, D, C = _diag6(self.M, "M"), _diag6(self.D, "D"), _diag6(self.C, "C")
        w_d = np.asarray(self.w_d.as_array() if isinstance(self.w_d, Wrench) else self.w_d, dtype=float).reshape(-1)
        if w_d.shape != (6,):
            raise ValidationError("w_d needs 6 entries")
        if np.any(M <= 0):
            raise ValidationError("all M entries must be > 0")
        if np.any(D < 0) or np.any(C < 0):
            raise ValidationError("D and C entries must be >= 0")
        for name, v in (("M", M), ("D", D), ("C", C), ("w_d", w_d)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def with_target_force(cls, f_target: float = 5.0, **kw) -> "AdmittanceGains":
        return cls(w_d=np.array([0.0, 0.0, -float(f_target), 0.0, 0.0, 0.0]), **kw)


def admittance_step(obs: ControllerObservation, gains: AdmittanceGains, x_state, xdot_state, dt: float):
    """One explicit Euler step of the per-axis admittance law.

        xdd    = (w_d - w_a - D xdot - C x) / M
        xdot' = xdot + xdd dt
        x'    = x + xdot' dt

    Returns (commanded twist = xdot', x', xdot').
    """
    if not dt > 0:
        raise ValidationError("dt must be > 0")
    w_a = obs.wrench.as_array()
    x = np.asarray(x_state, dtype=float)
    xd = np.asarray(xdot_state, dtype=float)
    xdd = (gains.w_d - w_a - gains.D * xd - gains.C * x) / gains.M
    xd_next = xd + xdd * dt
    x_next = x + xd_next * dt
    return xd_next.copy(), x_next, xd_next


class AdmittanceController:
    """Admittance control; the internal deviation is measured from the
    nominal (stationary) setpoint, descent comes from the desired force."""

    def __init__(self, gains: AdmittanceGains | None = None, max_linear: float = DEFAULT_MAX_LINEAR, max_angular: float = DEFAULT_MAX_ANGULAR):
        self.gains = gains or AdmittanceGains()
        self.max_linear = max_linear
        self.max_angular = max_angular
        self.dt = 1e-3
        self.x = np.zeros(6)
        self.xd = np.zeros(6)

    def reset(self, start: Pose6, goal: Pose6, dt: float, trial_id: str = "") -> None:
        self.dt = dt
        self.x = np.zeros(6)
        self.xd = np.zeros(6)

    def __call__(self, obs: ControllerObservation) -> np.ndarray:
        twist, self.x, self.xd = admittance_step(obs, self.gains, self.x, self.xd, self.dt)
        return clamp_twist(twist, self.max_linear, self.max_angular)


@dataclass(frozen=True, eq=False)
class PolicyAction:
    pose_correction: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.pose_correction, dtype=float).reshape(-1)
        if a.shape != (6,):
            raise ValidationError("pose_correction needs 6 entries")
        object.__setattr__(self, "pose_correction", a)


DEFAULT_CLAMP_TRANSLATION = 2e-3
DEFAULT_CLAMP_ROTATION = math.radians(0.5)


def clamp_action(action: PolicyAction, max_translation: float = DEFAULT_CLAMP_TRANSLATION, max_rotation: float = DEFAULT_CLAMP_ROTATION) -> PolicyAction:
    a = action.pose_correction
    if not np.all(np.isfinite(a)):
        raise ControllerFault("policy returned a non-finite action")
    return PolicyAction(np.concatenate([_clamp_norm(a[:3], max_translation), _clamp_norm(a[3:], max_rotation)]))


@dataclass
class ScriptedResidualPolicy:
    """Deterministic stand-in for a learned force-reactive residual policy.

    Each query descends by `descent_step`; when the lateral force exceeds
    `threshold` it also moves opposite to it by gain * |F_xy|, capped at
    `max_lateral`.
    """

    descent_step: float = 1e-4
    threshold: float = 0.5
    gain: float = 2e-5
    max_lateral: float = 2e-4

    def __call__(self, obs: ControllerObservation) -> PolicyAction:
        f = obs.wrench.force
        corr = np.zeros(6)
        corr[2] = -self.descent_step
        mag = math.hypot(f[0], f[1])
        if mag > self.threshold:
            step = min(self.gain * mag, self.max_lateral)
            corr[0] = -f[0] / mag * step
            corr[1] = -f[1] / mag * step
        return PolicyAction(corr)


class EchoPolicy:
    """Always returns a zero correction."""

    def __call__(self, obs: ControllerObservation) -> PolicyAction:
        return PolicyAction(np.zeros(6))


POLICIES: dict[str, Callable[[], Callable[[ControllerObservation], PolicyAction]]] = {
    "scripted": ScriptedResidualPolicy,
    "echo": EchoPolicy,
}


def observation_to_payload(obs: ControllerObservation, trial_id: str = "") -> dict:
    return {
        "trial_id": trial_id,
        "pose": obs.ee_pose.as_array().tolist(),
        "wrench": obs.wrench.as_array().tolist(),
        "time": obs.time,
    }


def observation_from_payload(payload: dict) -> tuple[str, ControllerObservation]:
    try:
        obs = ControllerObservation(
            Pose6.from_array(payload["pose"]),
            Wrench.from_array(np.asarray(payload["wrench"], dtype=float)),
            float(payload["time"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise wire.ProtocolError(f"bad observation: {exc}") from None
    return str(payload.get("trial_id", "")), obs


class PolicyTimeout(ControllerFault):
    pass


class LocalPolicyChannel:
    """In-process policy channel, same surface as the remote client."""

    def __init__(self, policy):
        self.policy = policy
        self.requests = 0

    def query(self, obs: ControllerObservation, trial_id: str = "") -> PolicyAction:
        self.requests += 1
        return self.policy(obs)

    def close(self) -> None:
        pass


class RemotePolicyClient:
    """Blocking POLICY_REQ/POLICY_RESP client with a per-request deadline."""

    def __init__(self, endpoint: str, deadline: float = 2.0, connect_timeout: float = 5.0):
        self.endpoint = endpoint
        self.deadline = deadline
        self.connect_timeout = connect_timeout
        self._channel: wire.Channel | None = None
        self.requests = 0

    def _connect(self) -> wire.Channel:
        if self._channel is None:
            try:
                self._channel = wire.Channel(self.endpoint, timeout=self.connect_timeout)
            except OSError as exc:
                raise ControllerFault(f"policy server unreachable: {exc}") from None
        return self._channel

    def query(self, obs: ControllerObservation, trial_id: str = "") -> PolicyAction:
        ch = self._connect()
        self.requests += 1
        try:
            reply = ch.request(wire.POLICY_REQ, observation_to_payload(obs, trial_id), timeout=self.deadline)
        except TimeoutError:
            self.close()
            raise PolicyTimeout("policy timeout") from None
        except (OSError, wire.ConnectionClosed) as exc:
            self.close()
            raise ControllerFault(f"policy connection lost: {exc}") from None
        if reply["type"] == wire.ERROR:
            raise ControllerFault(f"policy error: {(reply.get('payload') or {}).get('message', '')}")
        if reply["type"] != wire.POLICY_RESP:
            raise wire.ProtocolError(f"unexpected reply type {reply['type']!r}")
        try:
            return PolicyAction(reply["payload"]["action"])
        except (KeyError, TypeError, ValidationError) as exc:
            raise wire.ProtocolError(f"malformed policy response: {exc}") from None

    def close(self) -> None:
        if self._channel is not None:
            self._channel.close()
            self._channel = None


def remote_policy_step(obs: ControllerObservation, connection, control_period: float, trial_id: str = "", max_translation: float = DEFAULT_CLAMP_TRANSLATION, max_rotation: float = DEFAULT_CLAMP_ROTATION) -> tuple[PolicyAction, np.ndarray]:
    """Query the policy, clamp the action and convert it to a twist
    (correction / control period)."""
    try:
        action = connection.query(obs, trial_id)
    except wire.ProtocolError as exc:
        raise ControllerFault(f"protocol error: {exc}") from None
    action = clamp_action(action, max_translation, max_rotation)
    return action, action.pose_correction / control_period


class PolicyController:
    """Residual-policy controller that queries its channel every
    `control_period` seconds of simulated time and holds the twist between
    queries."""

    def __init__(self, channel, control_period: float = 0.01, max_translation: float = DEFAULT_CLAMP_TRANSLATION, max_rotation: float = DEFAULT_CLAMP_ROTATION):
        if not control_period > 0:
            raise ValidationError("control_period must be > 0")
        self.channel = channel
        self.control_period = control_period
        self.max_translation = max_translation
        self.max_rotation = max_rotation
        self.trial_id = ""
        self._every = 1
        self._count = 0
        self._twist = np.zeros(6)

    def reset(self, start: Pose6, goal: Pose6, dt: float, trial_id: str = "") -> None:
        self.trial_id = trial_id
        self._every = max(1, int(round(self.control_period / dt)))
        self._count = 0
        self._twist = np.zeros(6)

    def __call__(self, obs: ControllerObservation) -> np.ndarray:
        if self._count % self._every == 0:
            _, self._twist = remote_policy_step(obs, self.channel, self.control_period, self.trial_id, self.max_translation, self.max_rotation)
        self._count += 1
        return self._twist.copy()
