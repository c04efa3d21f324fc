"""Force-quality metrics over wrench time series.

Energy and smoothness are computed from the force channels only. Energy uses
the raw signal; smoothness uses the low-pass filtered one when a filter is
configured.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import TrialResult, ValidationError, WrenchSeries

INSERTION_Z = "insertion_z"
ORTHOGONAL_XY = "orthogonal_xy"
AXIS_MODES = (INSERTION_Z, ORTHOGONAL_XY)

# columns that are inverted during normalization (lower raw value is better)
LOWER_IS_BETTER = ("E_z", "E_xy", "S_z", "S_xy", "mean_time")
DEFAULT_EPSILON = 1e-3
DEFAULT_CUTOFF_HZ = 30.0


@dataclass(frozen=True)
class FilterConfig:
    cutoff_hz: float = DEFAULT_CUTOFF_HZ
    enabled: bool = True

    def __post_init__(self):
        if self.enabled and not (self.cutoff_hz > 0 and math.isfinite(self.cutoff_hz)):
            raise ValidationError("cutoff_hz must be > 0 when the filter is enabled")


NO_FILTER = FilterConfig(enabled=False)


@dataclass(frozen=True)
class MetricVector:
    """Aggregated metrics for one approach. E/S entries are None when no
    trial succeeded."""

    E_z: float | None
    E_xy: float | None
    S_z: float | None
    S_xy: float | None
    mean_time: float | None
    success_rate: float

    def __post_init__(self):
        for name in ("E_z", "E_xy", "S_z", "S_xy", "mean_time"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValidationError("success_rate must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "E_z": self.E_z,
            "E_xy": self.E_xy,
            "S_z": self.S_z,
            "S_xy": self.S_xy,
            "mean_time": self.mean_time,
            "success_rate": self.success_rate,
        }


@dataclass(frozen=True)
class Scoreboard:
    scores: dict[str, dict[str, float | None]]
    epsilon: float = DEFAULT_EPSILON
    columns: tuple[str, ...] = field(default=LOWER_IS_BETTER + ("success_rate",))

    def best(self, column: str) -> str:
        col = {k: v[column] for k, v in self.scores.items() if v[column] is not None}
        return max(col, key=col.get)


def _check_mode(axis_mode: str) -> None:
    if axis_mode not in AXIS_MODES:
        raise ValidationError(f"axis_mode must be one of {AXIS_MODES}, got {axis_mode!r}")


def _scalar_force(force: np.ndarray, axis_mode: str) -> np.ndarray:
    _check_mode(axis_mode)
    if axis_mode == INSERTION_Z:
        return force[:, 2]
    return np.hypot(force[:, 0], force[:, 1])


def force_energy(series: WrenchSeries, axis_mode: str = INSERTION_Z) -> float:
    """Mean squared force over all samples (N²)."""
    if len(series) == 0:
        raise ValidationError("force_energy needs a non-empty series")
    f = _scalar_force(series.force, axis_mode)
    return float(np.mean(f * f))


def low_pass(series: WrenchSeries, cfg: FilterConfig) -> WrenchSeries:
    """First-order exponential smoothing of every channel.

    y[0] = x[0];  y[n] = y[n-1] + alpha (x[n] - y[n-1]),
    alpha = dt / (dt + 1 / (2 pi cutoff)).
    """
    if not cfg.enabled or len(series) == 0:
        return series
    alpha = series.dt / (series.dt + 1.0 / (2.0 * math.pi * cfg.cutoff_hz))
    from scipy.signal import lfilter

    x = series.data
    # filter deviations from the first sample so constant inputs come back bit-exact
    x0 = x[0]
    y = lfilter([alpha], [1.0, alpha - 1.0], x - x0, axis=0)
    return series.with_data(y + x0)


def force_derivative(series: WrenchSeries, axis_mode: str = INSERTION_Z) -> np.ndarray:
    """Forward-difference rate of the scalar force channel.

    For the xy plane the rate is the magnitude of the (Fx, Fy) rate vector.
    """
    if len(series) < 2:
        raise ValidationError("a derivative needs at least 2 samples")
    _check_mode(axis_mode)
    d = np.diff(series.force, axis=0) / series.dt
    if axis_mode == INSERTION_Z:
        return d[:, 2]
    return np.hypot(d[:, 0], d[:, 1])


def force_smoothness(series: WrenchSeries, axis_mode: str = INSERTION_Z, cfg: FilterConfig = NO_FILTER) -> float:
    """Population standard deviation of the force rate (N/s)."""
    if len(series) < 2:
        raise ValidationError("force_smoothness needs at least 2 samples")
    rate = force_derivative(low_pass(series, cfg), axis_mode)
    return float(np.sqrt(np.mean((rate - rate.mean()) ** 2)))


def success_rate(results: Sequence[TrialResult]) -> float:
    if len(results) == 0:
        raise ValidationError("success_rate needs at least one result")
    return sum(1 for r in results if r.success) / len(results)


def mean_completion_time(results: Sequence[TrialResult], successful_only: bool = True) -> float:
    if len(results) == 0:
        raise ValidationError("mean_completion_time needs at least one result")
    chosen = [r.duration for r in results if r.success or not successful_only]
    if not chosen:
        raise ValidationError("no successful trial to average")
    return float(sum(chosen) / len(chosen))


def trial_metrics(series: WrenchSeries, cfg: FilterConfig = FilterConfig()) -> dict[str, float]:
    """Per-trial E and S for both axis modes."""
    out = {
        "E_z": force_energy(series, INSERTION_Z),
        "E_xy": force_energy(series, ORTHOGONAL_XY),
    }
    if len(series) >= 2:
        filtered = low_pass(series, cfg)
        out["S_z"] = force_smoothness(filtered, INSERTION_Z)
        out["S_xy"] = force_smoothness(filtered, ORTHOGONAL_XY)
    else:
        out["S_z"] = out["S_xy"] = 0.0
    return out


def compute_metric_vector(results: Sequence[TrialResult], cfg: FilterConfig = FilterConfig()) -> MetricVector:
    """E and S are means of per-trial values over successful trials; R is over all trials."""
    if len(results) == 0:
        raise ValidationError("compute_metric_vector needs at least one result")
    ok = [r for r in results if r.success]
    rate = success_rate(results)
    if not ok:
        return MetricVector(None, None, None, None, None, rate)
    per = [trial_metrics(r.wrench_series, cfg) for r in ok]
    mean = {k: float(np.mean([p[k] for p in per])) for k in ("E_z", "E_xy", "S_z", "S_xy")}
    return MetricVector(
        E_z=mean["E_z"],
        E_xy=mean["E_xy"],
        S_z=mean["S_z"],
        S_xy=mean["S_xy"],
        mean_time=mean_completion_time(results, successful_only=True),
        success_rate=rate,
    )


def normalize_scoreboard(raw: Mapping[str, MetricVector | Mapping[str, float | None]], epsilon: float = DEFAULT_EPSILON) -> Scoreboard:
    """Scale every column so the best approach scores 1.

    Lower-is-better columns map v -> (v_min + eps) / (v + eps). The success
    rate is not inverted and passes through unchanged. Missing values (no
    successful trial) stay None.
    """
    if not raw:
        raise ValidationError("normalize_scoreboard needs at least one approach")
    if epsilon < 0:
        raise ValidationError("epsilon must be >= 0")
    table = {name: (v.to_dict() if isinstance(v, MetricVector) else dict(v)) for name, v in raw.items()}
    scores: dict[str, dict[str, float | None]] = {name: {} for name in table}
    for col in LOWER_IS_BETTER + ("success_rate",):
        present = {n: row.get(col) for n, row in table.items() if row.get(col) is not None}
        for n, v in present.items():
            if v < 0 or not math.isfinite(v):
                raise ValidationError(f"raw value for {n}/{col} must be finite and >= 0, got {v}")
        for n in table:
            scores[n][col] = None
        if not present:
            continue
        if col == "success_rate":
            # already higher-is-better in [0, 1]; reported as-is
            for n, v in present.items():
                scores[n][col] = float(v)
            continue
        best = min(present.values())
        for n, v in present.items():
            scores[n][col] = 1.0 if v == best else (best + epsilon) / (v + epsilon)
    return Scoreboard(scores=scores, epsilon=epsilon)
