import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from insertbench.core import ContactParams, Pose6, TrialResult, ValidationError, WrenchSeries
from insertbench.metrics import (
    INSERTION_Z,
    NO_FILTER,
    ORTHOGONAL_XY,
    FilterConfig,
    MetricVector,
    compute_metric_vector,
    force_derivative,
    force_energy,
    force_smoothness,
    low_pass,
    mean_completion_time,
    normalize_scoreboard,
    success_rate,
)


def fz_series(values, dt=1e-3):
    data = np.zeros((len(values), 6))
    data[:, 2] = values
    return WrenchSeries(data, dt)


def result(success, duration, series=None, tid="t"):
    series = series if series is not None else fz_series([1.0, 1.0])
    fmax = float(np.max(np.linalg.norm(series.force, axis=1))) if len(series) else 0.0
    return TrialResult(tid, success, duration, series, fmax, Pose6.zero(), ContactParams(), 0)


series_data = arrays(np.float64, st.tuples(st.integers(2, 40), st.just(6)), elements=st.floats(-100, 100, allow_nan=False))


# energy ---------------------------------------------------------------
def test_energy_constant():
    assert force_energy(fz_series([2.0] * 17)) == 4.0


def test_energy_zero():
    assert force_energy(WrenchSeries(np.zeros((5, 6)), 1e-3), ORTHOGONAL_XY) == 0.0


def test_energy_hand_computed():
    assert force_energy(fz_series([1.0, 2.0, 3.0])) == pytest.approx(14 / 3, rel=1e-15)


def test_energy_xy_uses_planar_magnitude():
    s = WrenchSeries(np.array([[3.0, 4.0, 100.0, 0, 0, 0]]), 1e-3)
    assert force_energy(s, ORTHOGONAL_XY) == pytest.approx(25.0)


def test_bad_axis_mode():
    with pytest.raises(ValidationError):
        force_energy(fz_series([1.0]), "z")


# filter ---------------------------------------------------------------
def test_filter_disabled_is_identity():
    s = fz_series([1.0, 5.0, -2.0])
    assert low_pass(s, NO_FILTER) is s


@given(st.floats(-1e3, 1e3, allow_nan=False), st.floats(0.5, 500))
def test_filter_constant_series_exact(value, cutoff):
    s = WrenchSeries(np.full((30, 6), value), 1e-3)
    assert np.array_equal(low_pass(s, FilterConfig(cutoff)).data, s.data)


def test_filter_step_response():
    s = fz_series([1.0] * 200)
    # unit step at n=0 from a zero initial state
    s = fz_series([0.0] + [1.0] * 199)
    y = low_pass(s, FilterConfig(10.0)).force[:, 2]
    assert np.all(np.diff(y) > 0)
    assert y[-1] < 1.0
    tau_samples = int(round(1 / (2 * math.pi * 10) / 1e-3))
    assert y[tau_samples + 1] > 0.63


@settings(max_examples=30, deadline=None)
@given(series_data, st.floats(1.0, 200.0))
def test_filter_matches_oracle_and_keeps_shape(data, cutoff):
    s = WrenchSeries(data, 1e-3)
    out = low_pass(s, FilterConfig(cutoff))
    assert out.data.shape == s.data.shape and out.dt == s.dt
    ref = np.array(oracles.low_pass(data.tolist(), 1e-3, cutoff))
    assert np.allclose(out.data, ref, rtol=1e-9, atol=1e-9)


def test_filter_config_validation():
    with pytest.raises(ValidationError):
        FilterConfig(0.0)


# smoothness -----------------------------------------------------------
def test_smoothness_constant_and_ramp():
    assert force_smoothness(fz_series([3.0] * 10)) == 0.0
    ramp = fz_series(0.25 * np.arange(50) * 1e-3)
    assert force_smoothness(ramp) == pytest.approx(0.0, abs=1e-9)


def test_smoothness_hand_computed():
    assert force_smoothness(fz_series([0.0, 1.0, 0.0], dt=1.0)) == pytest.approx(1.0)


def test_derivative_has_one_fewer_sample():
    assert len(force_derivative(fz_series([0, 1, 2, 3.0]))) == 3


def test_smoothness_needs_two_samples():
    with pytest.raises(ValidationError):
        force_smoothness(fz_series([1.0]))


@settings(max_examples=60, deadline=None)
@given(series_data, st.sampled_from([INSERTION_Z, ORTHOGONAL_XY]))
def test_energy_and_smoothness_match_oracle(data, mode):
    s = WrenchSeries(data, 1e-3)
    rows = data.tolist()
    assert math.isclose(force_energy(s, mode), oracles.energy(rows, mode), rel_tol=1e-12, abs_tol=1e-12)
    assert math.isclose(force_smoothness(s, mode), oracles.smoothness(rows, 1e-3, mode), rel_tol=1e-9, abs_tol=1e-6)


@settings(max_examples=60, deadline=None)
@given(series_data, st.floats(0.01, 100), st.sampled_from([INSERTION_Z, ORTHOGONAL_XY]))
def test_scale_property(data, c, mode):
    s = WrenchSeries(data, 1e-3)
    scaled = s.with_data(data * c)
    assert force_energy(scaled, mode) == pytest.approx(c * c * force_energy(s, mode), rel=1e-9, abs=1e-12)
    assert force_smoothness(scaled, mode) == pytest.approx(c * force_smoothness(s, mode), rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(series_data, st.sampled_from([INSERTION_Z, ORTHOGONAL_XY]))
def test_time_reversal(data, mode):
    s = WrenchSeries(data, 1e-3)
    rev = s.with_data(data[::-1])
    assert force_energy(rev, mode) == pytest.approx(force_energy(s, mode), rel=1e-12, abs=1e-12)
    if mode == INSERTION_Z:
        assert force_smoothness(rev, mode) == pytest.approx(force_smoothness(s, mode), rel=1e-9, abs=1e-6)


# success / time -------------------------------------------------------
def test_success_rate_examples():
    assert success_rate([result(True, 1), result(True, 1), result(False, 1), result(True, 1)]) == 0.75
    assert success_rate([result(True, 1)] * 3) == 1.0
    assert success_rate([result(False, 1)] * 3) == 0.0
    with pytest.raises(ValidationError):
        success_rate([])


def test_mean_completion_time_examples():
    assert mean_completion_time([result(True, 2.0), result(True, 4.0)]) == 3.0
    assert mean_completion_time([result(True, 1.5)]) == 1.5
    rs = [result(True, 1.0), result(False, 100.0), result(True, 3.0)]
    assert mean_completion_time(rs, successful_only=True) == 2.0
    assert mean_completion_time(rs, successful_only=False) == pytest.approx(104 / 3)
    with pytest.raises(ValidationError):
        mean_completion_time([result(False, 1.0)], successful_only=True)


# aggregation ----------------------------------------------------------
def test_metric_vector_single_constant_trial():
    m = compute_metric_vector([result(True, 2.0, fz_series([1.0] * 100))])
    assert (m.E_z, m.S_z, m.success_rate, m.mean_time) == (1.0, 0.0, 1.0, 2.0)


def test_metric_vector_one_failed():
    ok = result(True, 1.0, fz_series([1.0, 2.0, 3.0]), "a")
    bad = result(False, 5.0, fz_series([50.0, 60.0]), "b")
    m = compute_metric_vector([ok, bad], NO_FILTER)
    assert m.success_rate == 0.5
    assert m.E_z == pytest.approx(14 / 3)
    assert m.S_z == pytest.approx(0.0)
    assert m.mean_time == 1.0


def test_metric_vector_all_failed():
    m = compute_metric_vector([result(False, 1.0), result(False, 2.0)])
    assert m.success_rate == 0.0
    assert m.E_z is None and m.S_xy is None and m.mean_time is None


def test_metric_vector_validation():
    with pytest.raises(ValidationError):
        MetricVector(-1.0, 0, 0, 0, 1, 0.5)
    with pytest.raises(ValidationError):
        MetricVector(1.0, 0, 0, 0, 1, 1.5)


# scoreboard -----------------------------------------------------------
def _mv(e):
    return MetricVector(e, e, e, e, e, 0.5)


def test_scoreboard_single_approach():
    board = normalize_scoreboard({"a": _mv(3.0)})
    assert all(v == 1.0 for k, v in board.scores["a"].items() if k != "success_rate")


def test_scoreboard_direct_formula():
    board = normalize_scoreboard({"a": _mv(2.0), "b": _mv(4.0)}, epsilon=0.0)
    assert board.scores["a"]["E_z"] == 1.0
    assert board.scores["b"]["E_z"] == 0.5


def test_scoreboard_table_shape():
    # force control far lower than position control: scores near 1 vs << 1
    board = normalize_scoreboard({"force": _mv(0.01), "position": _mv(5.0)})
    assert board.scores["force"]["E_z"] == 1.0
    assert board.scores["position"]["E_z"] < 0.01
    assert board.best("E_z") == "force"


def test_scoreboard_success_rate_passthrough_and_none():
    board = normalize_scoreboard({"a": MetricVector(None, None, None, None, None, 0.0), "b": _mv(1.0)})
    assert board.scores["a"]["E_z"] is None
    assert board.scores["a"]["success_rate"] == 0.0
    assert board.scores["b"]["success_rate"] == 0.5


def test_scoreboard_rejects_negative():
    with pytest.raises(ValidationError):
        normalize_scoreboard({"a": {"E_z": -1.0}})
    with pytest.raises(ValidationError):
        normalize_scoreboard({})


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=8), st.floats(1e-9, 10))
def test_scoreboard_preserves_ranking(values, eps):
    raw = {f"a{i}": {"E_z": v} for i, v in enumerate(values)}
    scores = normalize_scoreboard(raw, eps).scores
    for i, vi in enumerate(values):
        for j, vj in enumerate(values):
            if vi < vj:
                assert scores[f"a{i}"]["E_z"] >= scores[f"a{j}"]["E_z"]
    best = min(values)
    assert all(scores[f"a{i}"]["E_z"] == 1.0 for i, v in enumerate(values) if v == best)


def test_metrics_pure():
    s = fz_series(np.sin(np.arange(100) * 0.1))
    assert force_smoothness(s, cfg=FilterConfig(30)) == force_smoothness(s, cfg=FilterConfig(30))
