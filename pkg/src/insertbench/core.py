"""Shared domain types, seeding and pose sampling.

Units are SI throughout: meters, radians, newtons, newton-meters, seconds.
Orientation is a 3-vector of intrinsic XYZ Euler angles (roll, pitch, yaw).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""


def _vec(values, n: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise ValidationError(f"{name} must have {n} components, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    # np.mod maps +pi onto -pi; the interval is closed at +pi
    w = np.where(w <= -math.pi, w + 2.0 * math.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def euler_to_matrix(euler) -> np.ndarray:
    """Rotation matrix for intrinsic XYZ Euler angles: R = Rx(a) @ Ry(b) @ Rz(c)."""
    a, b, c = euler
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    cc, sc = math.cos(c), math.sin(c)
    return np.array(
        [
            [cb * cc, -cb * sc, sb],
            [ca * sc + sa * sb * cc, ca * cc - sa * sb * sc, -sa * cb],
            [sa * sc - ca * sb * cc, sa * cc + ca * sb * sc, ca * cb],
        ]
    )


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "force", _vec(self.force, 3, "force"))
        object.__setattr__(self, "torque", _vec(self.torque, 3, "torque"))

    @classmethod
    def zero(cls) -> "Wrench":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_array(cls, arr) -> "Wrench":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:3], arr[3:6])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    def __eq__(self, other):
        if not isinstance(other, Wrench):
            return NotImplemented
        return np.array_equal(self.force, other.force) and np.array_equal(self.torque, other.torque)


@dataclass(frozen=True, eq=False)
class WrenchSeries:
    """Uniformly sampled wrench time series, stored as an (n, 6) array
    with columns fx, fy, fz, tx, ty, tz."""

    data: np.ndarray
    dt: float
    trial_id: str = ""

    def __post_init__(self):
        arr = np.array(self.data, dtype=float, copy=True)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 6)
        if arr.ndim != 2 or arr.shape[1] != 6:
            raise ValidationError(f"wrench series must be (n, 6), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("wrench series contains non-finite values")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be > 0, got {self.dt}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def from_samples(cls, samples: Sequence[Wrench], dt: float, trial_id: str = "") -> "WrenchSeries":
        data = np.array([w.as_array() for w in samples], dtype=float).reshape(-1, 6)
        return cls(data, dt, trial_id)

    @property
    def force(self) -> np.ndarray:
        return self.data[:, :3]

    @property
    def torque(self) -> np.ndarray:
        return self.data[:, 3:]

    @property
    def samples(self) -> list[Wrench]:
        return [Wrench.from_array(row) for row in self.data]

    def __len__(self) -> int:
        return self.data.shape[0]

    def __iter__(self) -> Iterator[Wrench]:
        return iter(self.samples)

    def __getitem__(self, i) -> Wrench:
        return Wrench.from_array(self.data[i])

    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def with_data(self, data) -> "WrenchSeries":
        return WrenchSeries(data, self.dt, self.trial_id)

    def __eq__(self, other):
        if not isinstance(other, WrenchSeries):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.trial_id == other.trial_id
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class Pose6:
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vec(self.position, 3, "position"))
        ori = np.asarray(wrap_angle(_vec(self.orientation, 3, "orientation")), dtype=float)
        ori.setflags(write=False)
        object.__setattr__(self, "orientation", ori)

    @classmethod
    def zero(cls) -> "Pose6":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_array(cls, arr) -> "Pose6":
        arr = np.asarray(arr, dtype=float).reshape(-1)
        if arr.shape != (6,):
            raise ValidationError(f"pose must have 6 components, got {arr.shape[0]}")
        return cls(arr[:3], arr[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])

    def rotation(self) -> np.ndarray:
        return euler_to_matrix(self.orientation)

    def __eq__(self, other):
        if not isinstance(other, Pose6):
            return NotImplemented
        return np.array_equal(self.position, other.position) and np.array_equal(
            self.orientation, other.orientation
        )

    def __repr__(self):
        return f"Pose6(position={self.position.tolist()}, orientation={self.orientation.tolist()})"


@dataclass(frozen=True, eq=False)
class PoseDistribution:
    """Gaussian over start poses. Covariance may be given as a 6-vector
    (diagonal variances) or a full 6x6 matrix."""

    mean: Pose6
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape == (6,):
            cov = np.diag(cov)
        if cov.shape != (6, 6):
            raise ValidationError(f"covariance must be 6x6 or a 6-vector, got {cov.shape}")
        if not np.all(np.isfinite(cov)):
            raise ValidationError("covariance contains non-finite values")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-15):
            raise ValidationError("covariance must be symmetric")
        if self._is_diagonal(cov):
            if np.any(np.diag(cov) < 0):
                raise ValidationError("covariance diagonal must be >= 0")
        else:
            tol = 1e-12 * max(1.0, float(np.abs(cov).max()))
            if np.linalg.eigvalsh(cov).min() < -tol:
                raise ValidationError("covariance must be positive semidefinite")
        cov = cov.copy()
        cov.setflags(write=False)
        object.__setattr__(self, "covariance", cov)

    @staticmethod
    def _is_diagonal(cov: np.ndarray) -> bool:
        return not np.any(cov - np.diag(np.diag(cov)))

    def factor(self) -> np.ndarray:
        """Lower factor L with L @ L.T == covariance."""
        cov = self.covariance
        if self._is_diagonal(cov):
            return np.diag(np.sqrt(np.diag(cov)))
        # PSD but possibly singular: eigen factorization is robust where Cholesky is not
        try:
            return np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(cov)
            return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


@dataclass(frozen=True)
class ContactParams:
    time_constant: float = 0.02
    damping_ratio: float = 1.0
    impedance: float = 0.9
    sliding_friction: float = 0.3

    def __post_init__(self):
        for name in ("time_constant", "damping_ratio", "impedance", "sliding_friction"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.time_constant <= 0:
            raise ValidationError("time_constant must be > 0")
        if self.damping_ratio <= 0:
            raise ValidationError("damping_ratio must be > 0")
        if not 0.0 < self.impedance < 1.0:
            raise ValidationError("impedance must lie in (0, 1)")
        if self.sliding_friction < 0:
            raise ValidationError("sliding_friction must be >= 0")

    def to_dict(self) -> dict:
        return {
            "time_constant": self.time_constant,
            "damping_ratio": self.damping_ratio,
            "impedance": self.impedance,
            "sliding_friction": self.sliding_friction,
        }


@dataclass(frozen=True, eq=False)
class TrialResult:
    trial_id: str
    success: bool
    duration: float
    wrench_series: WrenchSeries
    max_force_magnitude: float
    start_pose: Pose6
    contact_params: ContactParams
    seed: int
    final_depth: float = 0.0
    failure_reason: str = ""

    def __post_init__(self):
        if self.duration < 0:
            raise ValidationError("duration must be >= 0")
        if not self.max_force_magnitude >= 0:
            raise ValidationError("max_force_magnitude must be >= 0")
        if len(self.wrench_series):
            peak = float(np.max(np.linalg.norm(self.wrench_series.force, axis=1)))
            if not math.isclose(peak, self.max_force_magnitude, rel_tol=1e-12, abs_tol=1e-12):
                raise ValidationError(f"max_force_magnitude {self.max_force_magnitude} != series peak {peak}")

    def __eq__(self, other):
        if not isinstance(other, TrialResult):
            return NotImplemented
        return (
            self.trial_id == other.trial_id
            and self.success == other.success
            and self.duration == other.duration
            and self.wrench_series == other.wrench_series
            and self.max_force_magnitude == other.max_force_magnitude
            and self.start_pose == other.start_pose
            and self.contact_params == other.contact_params
            and self.seed == other.seed
            and self.final_depth == other.final_depth
            and self.failure_reason == other.failure_reason
        )

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "success": bool(self.success),
            "duration": self.duration,
            "max_force_magnitude": self.max_force_magnitude,
            "start_pose": self.start_pose.as_array().tolist(),
            "contact_params": self.contact_params.to_dict(),
            "seed": int(self.seed),
            "final_depth": self.final_depth,
            "failure_reason": self.failure_reason,
            "dt": self.wrench_series.dt,
            "wrench": self.wrench_series.data.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        series = WrenchSeries(np.asarray(d["wrench"], dtype=float).reshape(-1, 6), d["dt"], d["trial_id"])
        return cls(
            trial_id=d["trial_id"],
            success=bool(d["success"]),
            duration=float(d["duration"]),
            wrench_series=series,
            max_force_magnitude=float(d["max_force_magnitude"]),
            start_pose=Pose6.from_array(d["start_pose"]),
            contact_params=ContactParams(**d["contact_params"]),
            seed=int(d["seed"]),
            final_depth=float(d.get("final_depth", 0.0)),
            failure_reason=d.get("failure_reason", ""),
        )


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by (master_seed, stream_id).

    Sub-streams for distinct purposes come from extra spawn-key entries,
    so no coordination between workers is needed.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= int(self.master_seed) < 2**64):
            raise ValidationError("master_seed must be a 64-bit unsigned integer")
        if int(self.stream_id) < 0:
            raise ValidationError("stream_id must be >= 0")

    def generator(self, *subkeys: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_id), *subkeys))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.derive_seed(), stream_id)

    def derive_seed(self, *subkeys: int) -> int:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_id), *subkeys))
        lo, hi = ss.generate_state(2, dtype=np.uint32)
        return (int(hi) << 32) | int(lo)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


def sample_pose(dist: PoseDistribution, rng) -> Pose6:
    """Draw mean + L z with z ~ N(0, I6); orientation is wrapped into (-pi, pi]."""
    gen = as_generator(rng)
    z = gen.standard_normal(6)
    x = dist.mean.as_array() + dist.factor() @ z
    return Pose6.from_array(x)


def add_repeatability_error(target: Pose6, repeatability_std: float, rng) -> Pose6:
    """Perturb the position by i.i.d. N(0, std^2) per axis; orientation is kept."""
    if not repeatability_std >= 0:
        raise ValidationError("repeatability_std must be >= 0")
    gen = as_generator(rng)
    noise = gen.standard_normal(3) * repeatability_std
    return Pose6(target.position + noise, target.orientation)
