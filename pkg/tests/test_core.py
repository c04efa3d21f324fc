import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insertbench.core import (
    ContactParams,
    Pose6,
    PoseDistribution,
    RngStream,
    TrialResult,
    ValidationError,
    Wrench,
    WrenchSeries,
    add_repeatability_error,
    euler_to_matrix,
    sample_pose,
    wrap_angle,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_wrench_rejects_non_finite():
    with pytest.raises(ValidationError):
        Wrench.from_array([0, 0, np.nan, 0, 0, 0])
    with pytest.raises(ValidationError):
        Wrench.from_array([0, 0, 0, np.inf, 0, 0])


def test_wrench_series_shape_and_dt():
    s = WrenchSeries(np.zeros((5, 6)), 1e-3, "t")
    assert len(s) == 5
    assert np.allclose(s.times(), np.arange(5) * 1e-3)
    assert len(WrenchSeries(np.zeros((0, 6)), 1e-3)) == 0
    with pytest.raises(ValidationError):
        WrenchSeries(np.zeros((3, 6)), 0.0)
    with pytest.raises(ValidationError):
        WrenchSeries(np.zeros((3, 5)), 1e-3)


def test_wrench_series_from_samples_round_trip():
    ws = [Wrench.from_array(np.arange(6) + i) for i in range(3)]
    s = WrenchSeries.from_samples(ws, 0.01)
    assert [w.as_array().tolist() for w in s.samples] == [w.as_array().tolist() for w in ws]


@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_angle_range(a):
    w = float(wrap_angle(a))
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


def test_wrap_angle_pi_boundary():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_pose_orientation_wrapped():
    p = Pose6([0, 0, 0], [4.0, -4.0, 7.0])
    assert np.all(p.orientation > -math.pi) and np.all(p.orientation <= math.pi)


def test_euler_matrix_is_rotation():
    r = euler_to_matrix([0.1, -0.2, 0.3])
    assert np.allclose(r @ r.T, np.eye(3))
    assert np.isclose(np.linalg.det(r), 1.0)
    # intrinsic XYZ: R = Rx Ry Rz
    rx = euler_to_matrix([0.1, 0, 0])
    ry = euler_to_matrix([0, -0.2, 0])
    rz = euler_to_matrix([0, 0, 0.3])
    assert np.allclose(r, rx @ ry @ rz)


def test_pose_distribution_validation():
    with pytest.raises(ValidationError):
        PoseDistribution(Pose6.zero(), np.array([1, 1, -1, 0, 0, 0.0]))
    bad = np.zeros((6, 6))
    bad[0, 1] = 1.0
    with pytest.raises(ValidationError):
        PoseDistribution(Pose6.zero(), bad)
    not_psd = np.eye(6)
    not_psd[0, 1] = not_psd[1, 0] = 2.0
    with pytest.raises(ValidationError):
        PoseDistribution(Pose6.zero(), not_psd)


def test_full_covariance_factor():
    a = np.random.default_rng(0).normal(size=(6, 6))
    cov = a @ a.T
    d = PoseDistribution(Pose6.zero(), cov)
    L = d.factor()
    assert np.allclose(L @ L.T, cov)


def test_singular_full_covariance_factor():
    v = np.arange(1, 7, dtype=float)[:, None]
    cov = v @ v.T * 1e-6
    L = PoseDistribution(Pose6.zero(), cov).factor()
    assert np.allclose(L @ L.T, cov, atol=1e-12)


def test_sample_pose_zero_covariance():
    assert sample_pose(PoseDistribution(Pose6.zero()), 3).as_array().tolist() == [0.0] * 6


def test_sample_pose_zero_variance_axes_unchanged():
    mean = Pose6([0, 0, 0.05], [0, 0, 0])
    d = PoseDistribution(mean, np.array([1e-6, 0, 0, 0, 0, 0]))
    gen = np.random.default_rng(1)
    xs = np.array([sample_pose(d, gen).as_array() for _ in range(200)])
    assert xs[:, 0].std() > 0
    assert np.all(xs[:, 1:] == mean.as_array()[1:])


def test_sample_pose_std_statistics():
    d = PoseDistribution(Pose6.zero(), np.array([1e-6, 0, 0, 0, 0, 0]))
    gen = RngStream(7).generator()
    xs = np.array([sample_pose(d, gen).position[0] for _ in range(10_000)])
    assert abs(xs.std() - 1e-3) / 1e-3 < 0.05


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 4.0), min_size=3, max_size=3), st.integers(0, 2**32))
def test_sample_pose_orientation_in_range(stds, seed):
    cov = np.array([0, 0, 0, *stds]) ** 2
    p = sample_pose(PoseDistribution(Pose6([0, 0, 0], [3.0, -3.0, 3.1]), cov), seed)
    assert np.all(p.orientation > -math.pi) and np.all(p.orientation <= math.pi)


def test_repeatability_error():
    p = Pose6([0.1, 0.2, 0.3], [0.01, 0.02, 0.03])
    assert add_repeatability_error(p, 0.0, 1) == p
    with pytest.raises(ValidationError):
        add_repeatability_error(p, -1.0, 1)
    gen = np.random.default_rng(5)
    draws = [add_repeatability_error(Pose6.zero(), 1e-4, gen) for _ in range(10_000)]
    pos = np.array([d.position for d in draws])
    assert np.all(np.abs(pos.std(axis=0) - 1e-4) / 1e-4 < 0.05)
    # axes independent
    c = np.corrcoef(pos.T)
    assert np.all(np.abs(c[np.triu_indices(3, 1)]) < 0.05)
    assert all(np.array_equal(d.orientation, np.zeros(3)) for d in draws)


def test_contact_params_validation():
    ContactParams(0.1, 1.0, 0.5, 0.0)
    for kw in ({"time_constant": 0}, {"damping_ratio": 0}, {"impedance": 1.0}, {"impedance": 0.0}, {"sliding_friction": -0.1}):
        with pytest.raises(ValidationError):
            ContactParams(**kw)


def test_rng_stream_reproducible_and_independent():
    a = RngStream(42, 3).generator().standard_normal(5)
    b = RngStream(42, 3).generator().standard_normal(5)
    assert np.array_equal(a, b)
    x = RngStream(42, 0).generator().standard_normal(10_000)
    y = RngStream(42, 1).generator().standard_normal(10_000)
    # correlation of independent streams is O(1/sqrt(n)) = 0.01
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.04
    assert RngStream(42, 0).derive_seed(1) != RngStream(42, 0).derive_seed(2)
    with pytest.raises(ValidationError):
        RngStream(-1)


def _result(success=True, duration=1.0):
    data = np.zeros((4, 6))
    data[:, 2] = [1.0, -2.0, 0.5, 3.0]
    s = WrenchSeries(data, 1e-3, "t1")
    return TrialResult("t1", success, duration, s, 3.0, Pose6([0, 0, 0.01], [0.01, 0, 0]), ContactParams(), 99, 0.02, "")


def test_trial_result_round_trip():
    r = _result()
    assert TrialResult.from_dict(r.to_dict()) == r


def test_trial_result_max_force_must_match_series():
    r = _result()
    with pytest.raises(ValidationError):
        TrialResult(r.trial_id, True, 1.0, r.wrench_series, 1.0, r.start_pose, r.contact_params, 1)


def test_trial_result_negative_duration_rejected():
    with pytest.raises(ValidationError):
        _result(duration=-1.0)
