import math

import numpy as np
import pytest

from usvnav.dynamics import BodyVelocity, Pose2D
from usvnav.localization import (
    EkfState,
    GnssMeasurement,
    ImuMeasurement,
    PlanarEkf,
    ProcessNoise,
    motion_jacobian,
    motion_model,
    predict,
    update_gnss,
    update_imu,
)

ZERO_Q = ProcessNoise(0, 0, 0, 0, 0)


def state(mean, sig=1.0):
    return EkfState(np.asarray(mean, float), np.eye(6) * sig**2)


def test_stationary_propagation():
    # velocities known to be zero: nothing can move
    s = EkfState(np.array([1, 2, 0.3, 0, 0, 0]), np.diag([1.0, 2.0, 0.1, 0, 0, 0]))
    out = predict(s, 0.7, ZERO_Q)
    np.testing.assert_array_equal(out.mean, s.mean)
    np.testing.assert_array_equal(out.cov, s.cov)


def test_velocity_uncertainty_spreads_into_position():
    out = predict(state([1, 2, 0.3, 0, 0, 0]), 0.7, ZERO_Q)
    assert out.cov[0, 0] > 1.0 and out.cov[1, 1] > 1.0


def test_kinematic_map():
    out = predict(state([0, 0, 0, 1, 0, 0]), 1.0, ZERO_Q)
    assert out.mean[0] == 1.0 and out.mean[1] == 0.0


def test_predict_rejects_bad_dt():
    with pytest.raises(ValueError):
        predict(state(np.zeros(6)), 0.0, ZERO_Q)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(100):
        x = np.concatenate([rng.normal(0, 10, 2), rng.uniform(-3, 3, 1), rng.normal(0, 2, 3)])
        dt = rng.uniform(0.01, 1.0)
        F = motion_jacobian(x, dt)
        num = np.empty((6, 6))
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            num[:, j] = (motion_model(x + e, dt) - motion_model(x - e, dt)) / (2 * h)
        np.testing.assert_allclose(F, num, atol=1e-6)


def test_gnss_zero_innovation():
    s = state([3, 4, 0.1, 1, 0, 0])
    out = update_gnss(s, GnssMeasurement(3, 4, 0.5))
    np.testing.assert_allclose(out.mean, s.mean, atol=0)
    np.testing.assert_array_equal(out.innovation, [0, 0])
    assert out.nis == 0


def test_gnss_infinite_sigma_is_noop():
    s = state([3, 4, 0.1, 1, 0, 0])
    out = update_gnss(s, GnssMeasurement(100, -100, math.inf))
    np.testing.assert_allclose(out.mean, s.mean, atol=1e-9)
    np.testing.assert_allclose(out.cov, s.cov, atol=1e-9)


def test_gnss_huge_sigma_barely_moves():
    s = state([3, 4, 0.1, 1, 0, 0])
    out = update_gnss(s, GnssMeasurement(100, -100, 1e8))
    np.testing.assert_allclose(out.mean, s.mean, atol=1e-9)


def test_gnss_scalar_posterior():
    for p, sig in [(1.0, 1.0), (4.0, 0.3), (0.01, 2.0)]:
        s = EkfState(np.zeros(6), np.eye(6) * p)
        out = update_gnss(s, GnssMeasurement(0.5, -0.2, sig))
        expected = 1.0 / (1.0 / p + 1.0 / sig**2)
        assert out.cov[0, 0] == pytest.approx(expected, rel=1e-12)
        assert out.cov[1, 1] == pytest.approx(expected, rel=1e-12)
        assert out.mean[0] == pytest.approx(0.5 * p / (p + sig**2), rel=1e-12)


def test_imu_innovation_wrapped():
    s = state([0, 0, 3.1, 0, 0, 0], sig=0.1)
    out = update_imu(s, ImuMeasurement(-3.1, 0.0, 0.05, 0.05))
    assert out.innovation[0] == pytest.approx(2 * math.pi - 6.2, abs=1e-12)
    assert abs(out.innovation[0]) < 0.1
    # the estimate crosses +pi instead of swinging back through zero
    assert abs(out.mean[2]) > 3.1


def test_imu_zero_innovation():
    s = state([0, 0, 0.4, 1, 0, 0.2])
    out = update_imu(s, ImuMeasurement(0.4, 0.2, 0.02, 0.01))
    np.testing.assert_allclose(out.mean, s.mean, atol=0)


def test_imu_repeated_updates_contract():
    s = state([0, 0, 0.0, 0, 0, 0], sig=0.5)
    err = abs(0.8 - s.mean[2])
    for _ in range(20):
        s = update_imu(s, ImuMeasurement(0.8, 0.0, 0.1, 0.1))
        new = abs(0.8 - s.mean[2])
        assert new <= err
        err = new
    assert err < 0.01


def test_rejects_non_psd_innovation():
    cov = np.eye(6)
    cov[0, 0] = cov[1, 1] = -5.0  # corrupted prior
    s = EkfState(np.zeros(6), cov)
    out = update_gnss(s, GnssMeasurement(1, 1, 0.1))
    assert out.rejected
    np.testing.assert_array_equal(out.mean, s.mean)
    np.testing.assert_array_equal(out.cov, s.cov)


def test_long_random_sequence_keeps_cov_valid():
    rng = np.random.default_rng(7)
    s = EkfState.initial(Pose2D(0, 0, 0), BodyVelocity(1, 0, 0))
    q = ProcessNoise()
    for _ in range(10_000):
        k = rng.integers(3)
        if k == 0:
            s = predict(s, rng.uniform(0.001, 0.2), q)
        elif k == 1:
            before = s.cov[:2, :2].diagonal().copy()
            s = update_gnss(s, GnssMeasurement(*rng.normal(0, 20, 2), rng.uniform(0.05, 3)))
            assert np.all(s.cov[:2, :2].diagonal() <= before + 1e-12)
        else:
            before = s.cov[[2, 5], [2, 5]].copy()
            s = update_imu(s, ImuMeasurement(rng.uniform(-math.pi, math.pi), rng.normal(0, 1), 0.05, 0.05))
            assert np.all(s.cov[[2, 5], [2, 5]] <= before + 1e-12)
        assert np.max(np.abs(s.cov - s.cov.T)) < 1e-9
    assert np.min(np.linalg.eigvalsh(s.cov)) >= -1e-9


def test_state_validation():
    with pytest.raises(ValueError):
        EkfState(np.zeros(6), np.triu(np.ones((6, 6))))
    with pytest.raises(ValueError):
        EkfState(np.full(6, np.nan), np.eye(6))
    with pytest.raises(ValueError):
        GnssMeasurement(0, 0, 0)
    assert EkfState(np.array([0, 0, 4.0, 0, 0, 0]), np.eye(6)).mean[2] == pytest.approx(4.0 - 2 * math.pi)


def test_filter_drops_out_of_order():
    f = PlanarEkf(EkfState.initial(Pose2D(0, 0, 0)))
    f.gnss(1.0, GnssMeasurement(0.1, 0.0, 0.3))
    mean = f.state.mean.copy()
    f.gnss(0.5, GnssMeasurement(5.0, 5.0, 0.3))
    assert f.dropped == 1
    np.testing.assert_array_equal(f.state.mean, mean)
    f.imu(1.0, ImuMeasurement(0.0, 0.0, 0.02, 0.01))  # equal timestamp is fine
    assert f.dropped == 1 and f.time == 1.0


def test_filter_tracks_constant_velocity():
    rng = np.random.default_rng(3)
    f = PlanarEkf(EkfState.initial(Pose2D(0, 0, 0), BodyVelocity(0.5, 0, 0)))
    for k in range(1, 601):
        t = k * 0.1
        f.imu(t, ImuMeasurement(rng.normal(0, 0.02), rng.normal(0, 0.01), 0.02, 0.01))
        if k % 10 == 0:
            f.gnss(t, GnssMeasurement(1.0 * t + rng.normal(0, 0.3), rng.normal(0, 0.3), 0.3))
    assert f.state.mean[3] == pytest.approx(1.0, abs=0.1)
    assert f.state.mean[0] == pytest.approx(60.0, abs=0.5)
