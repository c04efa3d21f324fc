"""Experiment report: aggregated metrics, max-force histogram, per-trial table.

Everything written here is a pure function of the trial results and the
spec, so two runs with the same seed produce byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import TrialResult, ValidationError
from ..metrics import FilterConfig, MetricVector, compute_metric_vector, trial_metrics
from ..sim import write_series_csv
from .spec import ExperimentSpec

TRIAL_COLUMNS = (
    "task_id", "seed", "success", "failure_reason", "duration", "final_depth", "max_force",
    "time_constant", "damping_ratio", "impedance", "sliding_friction",
    "x0", "y0", "z0", "a0", "b0", "c0",
    "samples", "E_z", "E_xy", "S_z", "S_xy",
)


@dataclass(frozen=True)
class Histogram:
    bin_width: float
    edges: tuple[float, ...]
    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def to_dict(self) -> dict:
        return {"bin_width": self.bin_width, "edges": list(self.edges), "counts": list(self.counts)}


@dataclass
class ExperimentReport:
    metrics: MetricVector
    histogram: Histogram
    rows: list[dict]
    results: list[TrialResult] = field(repr=False, default_factory=list)
    spec: dict = field(default_factory=dict)

    @property
    def n_trials(self) -> int:
        return len(self.rows)

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "metrics": self.metrics.to_dict(),
            "histogram": self.histogram.to_dict(),
            "trials": self.rows,
            "spec": self.spec,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def trials_csv(self) -> str:
        return table_csv(self.rows)

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo_N", "bin_hi_N", "count"])
        h = self.histogram
        for i, c in enumerate(h.counts):
            w.writerow([repr(h.edges[i]), repr(h.edges[i + 1]), c])
        return buf.getvalue()


def force_histogram(values, bin_width: float = 1.0) -> Histogram:
    """Fixed-width bins aligned to multiples of `bin_width`; bin k covers
    [k*w, (k+1)*w)."""
    if not bin_width > 0:
        raise ValidationError("histogram bin width must be > 0")
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return Histogram(bin_width, (), ())
    idx = np.floor(v / bin_width).astype(np.int64)
    lo = int(idx.min())
    counts = np.bincount(idx - lo)
    edges = tuple(float((lo + k) * bin_width) for k in range(len(counts) + 1))
    return Histogram(float(bin_width), edges, tuple(int(c) for c in counts))


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return v
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    return v


def trial_row(r: TrialResult, cfg: FilterConfig) -> dict:
    p = r.contact_params
    row = {
        "task_id": r.trial_id,
        "seed": int(r.seed),
        "success": bool(r.success),
        "failure_reason": r.failure_reason,
        "duration": float(r.duration),
        "final_depth": float(r.final_depth),
        "max_force": float(r.max_force_magnitude),
        "time_constant": p.time_constant,
        "damping_ratio": p.damping_ratio,
        "impedance": p.impedance,
        "sliding_friction": p.sliding_friction,
    }
    for name, v in zip(("x0", "y0", "z0", "a0", "b0", "c0"), r.start_pose.as_array()):
        row[name] = float(v)
    row["samples"] = len(r.wrench_series)
    if len(r.wrench_series):
        row.update(trial_metrics(r.wrench_series, cfg))
    else:
        row.update({k: None for k in ("E_z", "E_xy", "S_z", "S_xy")})
    return {k: _fmt(row[k]) for k in TRIAL_COLUMNS}


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_COLUMNS)
    for row in rows:
        out = []
        for k in TRIAL_COLUMNS:
            v = row[k]
            if v is None:
                out.append("")
            elif isinstance(v, bool):
                out.append(int(v))
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(v)
        w.writerow(out)
    return buf.getvalue()


def aggregate_report(results, spec: ExperimentSpec) -> ExperimentReport:
    """Metric vector, max-force histogram and the per-trial table (sorted by task id)."""
    results = sorted(results, key=lambda r: r.trial_id)
    ids = [r.trial_id for r in results]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate task ids in results")
    cfg = spec.filter_config()
    metrics = compute_metric_vector(results, cfg)
    hist = force_histogram([r.max_force_magnitude for r in results if len(r.wrench_series)], spec.output.histogram_bin)
    rows = [trial_row(r, cfg) for r in results]
    spec_dict = spec.to_dict()
    # the output directory does not affect results
    spec_dict["output"].pop("dir", None)
    return ExperimentReport(metrics, hist, rows, results, spec_dict)


def write_report(report: ExperimentReport, out_dir, dump_series: bool = False, plots: bool = False) -> dict[str, Path]:
    """Write report.json, trials.csv, histogram.csv (and optionally per-trial
    wrench series and PNG figures). Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "report.json",
        "trials": out / "trials.csv",
        "histogram": out / "histogram.csv",
    }
    paths["json"].write_text(report.to_json())
    paths["trials"].write_text(report.trials_csv())
    paths["histogram"].write_text(report.histogram_csv())
    if dump_series:
        sdir = out / "series"
        sdir.mkdir(exist_ok=True)
        for r in report.results:
            if len(r.wrench_series):
                write_series_csv(r.wrench_series, sdir / f"{r.trial_id}.csv")
        paths["series"] = sdir
    if plots:
        from ..plotting import plot_report

        paths.update(plot_report(report, out))
    return paths
