import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dockbench.config import real0p5m
from dockbench.estimation import (
    EkfParams,
    EstimatedState,
    EstimatorFailure,
    VehicleFilter,
    ekf_predict,
    ekf_update_mocap,
    nees,
)
from dockbench.sensing import ImuSample, MocapSample, SensorConfig
from dockbench.world import RigidState

P = EkfParams()


def est(x=None, cov=None, stamp=0.0):
    x = np.zeros(7) if x is None else np.asarray(x, float)
    return EstimatedState(x, np.eye(7) * 1e-3 if cov is None else cov, stamp)


def imu(a=(0, 0, 0), g=0.0, stamp=0.0):
    return ImuSample(np.asarray(a, float), g, stamp)


def test_stationary_predict():
    e = est()
    out = ekf_predict(e, imu(), 0.01, P)
    assert np.array_equal(out.x_hat, e.x_hat)
    assert np.trace(out.cov) > np.trace(e.cov)
    assert out.stamp == pytest.approx(0.01)


def test_constant_velocity_predict():
    out = ekf_predict(est([0, 0, 0, 1, 0, 0, 0]), imu(), 0.1, P)
    assert out.x_hat[0] == pytest.approx(0.1, abs=1e-15)


def test_predict_with_accel_and_gyro():
    out = ekf_predict(est([0, 0, 0, 1, 0, 0, 3.1]), imu((2, 0, -1), 1.0), 0.1, P)
    assert out.x_hat[0] == pytest.approx(0.1 + 0.5 * 2 * 0.01)
    assert out.x_hat[2] == pytest.approx(-0.5 * 0.01)
    assert out.x_hat[3] == pytest.approx(1.2) and out.x_hat[5] == pytest.approx(-0.1)
    assert out.x_hat[6] == pytest.approx(3.2 - 2 * math.pi)


def test_predict_covariance_matches_dense_form():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(7, 7))
    cov = A @ A.T + 7 * np.eye(7)
    dt = 0.004
    F = np.eye(7)
    F[0, 3] = F[1, 4] = F[2, 5] = dt
    qa = P.q_accel**2
    Q = np.zeros((7, 7))
    for i in range(3):
        Q[i, i] = qa * dt**3 / 3
        Q[i, i + 3] = Q[i + 3, i] = qa * dt**2 / 2
        Q[i + 3, i + 3] = qa * dt
    Q[6, 6] = P.q_yaw**2 * dt
    out = ekf_predict(est(cov=cov), imu(), dt, P)
    assert np.allclose(out.cov, F @ cov @ F.T + Q, rtol=1e-13, atol=1e-15)


def test_predict_rejects_bad_dt_and_nan():
    with pytest.raises(ValueError):
        ekf_predict(est(), imu(), 0.0, P)
    with pytest.raises(EstimatorFailure):
        ekf_predict(est(cov=np.full((7, 7), np.nan)), imu(), 0.01, P)


def test_exact_measurement_limit():
    tight = replace(P, r_pos=1e-9, r_yaw=1e-9)
    z = MocapSample(np.array([0.3, -0.1, 1.0]), 0.2, 0.0)
    out = ekf_update_mocap(est(cov=np.eye(7)), z, tight)  # wide prior so the gate passes
    assert np.allclose(out.x_hat[0:3], z.position, atol=1e-6)
    assert out.x_hat[6] == pytest.approx(0.2, abs=1e-6)


def test_zero_innovation_shrinks_cov():
    e = est([0.1, 0.2, 1.0, 0, 0, 0, 0.3])
    z = MocapSample(e.x_hat[0:3].copy(), 0.3, 0.0)
    out = ekf_update_mocap(e, z, P)
    assert np.allclose(out.x_hat, e.x_hat, atol=1e-15)
    assert np.trace(out.cov) < np.trace(e.cov)


def test_yaw_innovation_wraps():
    # prior 3.1, measured -3.1: the short way round is +(2*pi - 6.2)
    cov = np.eye(7) * 1e-3
    wide = replace(P, r_yaw=0.1)
    cov[6, 6] = wide.r_yaw**2  # equal prior and measurement variance: half the innovation
    e = est([0, 0, 0, 0, 0, 0, 3.1], cov)
    z = MocapSample(np.zeros(3), -3.1, 0.0)
    out = ekf_update_mocap(e, z, wide)
    innovation = 2 * math.pi - 6.2
    assert innovation == pytest.approx(0.0831853, abs=1e-6)
    expected = math.remainder(3.1 + 0.5 * innovation, 2 * math.pi)
    assert out.x_hat[6] == pytest.approx(expected, abs=1e-9)


def test_gate_rejects_outlier_unchanged():
    e = est()
    z = MocapSample(np.array([1.0, 0, 0]), 0.0, 0.0)  # ~30 sigma away
    assert ekf_update_mocap(e, z, P) is e


def test_out_of_order_sample_dropped():
    e = est(stamp=1.0)
    assert ekf_update_mocap(e, MocapSample(np.zeros(3), 0.0, 0.5), P) is e


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-0.01, 0.01), min_size=4, max_size=4),
    st.floats(1e-5, 1e-1),
    st.integers(0, 2**31),
)
def test_update_keeps_cov_spd_and_trace_nonincreasing(dz, scale, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(7, 7))
    cov = scale * (A @ A.T / 7 + np.eye(7))
    e = est(rng.normal(size=7) * 0.1, cov)
    z = MocapSample(e.x_hat[0:3] + dz[:3], float(e.x_hat[6] + dz[3]), 0.0)
    out = ekf_update_mocap(e, z, P)
    assert np.allclose(out.cov, out.cov.T, atol=1e-9)
    np.linalg.cholesky(out.cov)
    assert np.trace(out.cov) <= np.trace(e.cov) * (1 + 1e-12)
    assert -math.pi < out.x_hat[6] <= math.pi


def test_nees_identities():
    t = RigidState(np.array([1.0, 2, 3]), np.array([0.1, 0, 0]), 0.5, 0.0)
    exact = est([1, 2, 3, 0.1, 0, 0, 0.5])
    assert nees(exact, t) == 0.0
    off = est([1.01, 2, 3, 0.1, 0, 0, 0.5])
    doubled = EstimatedState(off.x_hat, 2 * off.cov, 0.0)
    assert nees(off, t) == pytest.approx(0.01**2 / 1e-3)
    assert nees(doubled, t) == pytest.approx(nees(off, t) / 2)
    with pytest.raises(EstimatorFailure):
        nees(EstimatedState(off.x_hat, np.zeros((7, 7)), 0.0), t)


def test_matched_params():
    s = SensorConfig(accel_noise=0.05, imu_rate=400.0, mocap_pos_noise=0.0)
    m = EkfParams.matched(s)
    assert m.q_accel == pytest.approx(0.05 / 20)
    assert m.r_pos == 1e-4  # floored


def test_filter_initializes_from_first_pose_and_ignores_early_imu():
    f = VehicleFilter(P)
    f.on_imu(imu((1, 0, 0), 0.0, 0.0))
    assert not f.initialized
    assert f.on_mocap(MocapSample(np.array([0.5, 0, 1]), 0.1, 0.0))
    assert np.allclose(f.est.x_hat[0:3], [0.5, 0, 1]) and f.last_update == 0.0


def test_late_mocap_equals_in_order_processing():
    # a latent sample fused after later IMU steps gives the same result as in-order fusion
    z0 = MocapSample(np.zeros(3), 0.0, 0.0)
    imus = [imu((0.5, 0, 0), 0.0, 0.002 * k) for k in range(1, 11)]
    z1 = MocapSample(np.array([0.0002, 0.0, 0.0]), 0.0, 0.01)

    def run(late):
        f = VehicleFilter(P)
        f.on_mocap(z0)
        for i, m in enumerate(imus):
            f.on_imu(m)
            if not late and i == 4:
                f.on_mocap(z1)
        if late:
            f.on_mocap(z1)
        return f.est

    # stamps in the late run: z1 at 0.01 sits between imu 5 (0.010) and 6
    a, b = run(False), run(True)
    assert np.allclose(a.x_hat, b.x_hat, atol=1e-15)
    assert np.allclose(a.cov, b.cov, atol=1e-18)


def test_noise_free_tracks_truth_within_1mm():
    from dockbench.bench.consistency import hover_run
    from dockbench.world import OuParams

    cfg = real0p5m()
    cfg = replace(cfg, sensors=SensorConfig.noise_free(), world=replace(cfg.world, disturbance=OuParams(0.2, 1.0)))
    run = hover_run(cfg, 0, 3.0, start=(-0.5, 0.3, 0.2))
    assert run.pos_error[run.t >= 1.0].max() < 1e-3


def test_predict_catches_off_diagonal_nan():
    cov = np.eye(7) * 1e-3
    cov[0, 1] = cov[1, 0] = np.nan
    with pytest.raises(EstimatorFailure):
        ekf_predict(est(cov=cov), imu(), 0.01, P)
