"""Per-vehicle EKF over the reduced state [x, y, z, vx, vy, vz, yaw].

The process model is constant velocity driven by the IMU acceleration, with
yaw integrated from the gyro. MoCap position and yaw are fused with a
Joseph-form update and a Mahalanobis innovation gate.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import wrap_angle
from .sensing import ImuSample, MocapSample, SensorConfig
from .world import RigidState

log = logging.getLogger(__name__)

NX = 7
YAW = 6
_MEAS = [0, 1, 2, YAW]  # state components observed by MoCap
_I7 = np.eye(NX)


class EstimatorFailure(ArithmeticError):
    """Covariance lost positive-definiteness or became singular."""


@dataclass(frozen=True)
class EkfParams:
    q_accel: float = 0.01  # m/s^2 per sqrt(Hz), drives velocity
    q_yaw: float = 0.005  # rad/s per sqrt(Hz)
    r_pos: float = 0.001  # m
    r_yaw: float = 0.005  # rad
    p0: tuple[float, ...] = (1e-4, 1e-4, 1e-4, 1e-2, 1e-2, 1e-2, 1e-3)
    gate_sigma: float = 5.0

    def validate(self) -> list[str]:
        errs = []
        for name in ("q_accel", "q_yaw", "r_pos", "r_yaw", "gate_sigma"):
            if not getattr(self, name) > 0:
                errs.append(f"ekf.{name} ({getattr(self, name)}) must be > 0")
        if len(self.p0) != NX or not all(v > 0 for v in self.p0):
            errs.append("ekf.p0 must hold 7 positive variances")
        return errs

    @classmethod
    def matched(cls, sensors: SensorConfig, floor: float = 1e-4, **overrides) -> "EkfParams":
        """Noise intensities consistent with a sensor configuration.

        White IMU noise of std ``s`` sampled at ``f`` Hz and integrated once is
        equivalent to a continuous intensity ``s / sqrt(f)``.
        """
        dt = 1.0 / sensors.imu_rate
        kw = dict(
            q_accel=max(sensors.accel_noise * math.sqrt(dt), floor),
            q_yaw=max(sensors.gyro_noise * math.sqrt(dt), floor),
            r_pos=max(sensors.mocap_pos_noise, floor),
            r_yaw=max(sensors.mocap_yaw_noise, floor),
        )
        kw.update(overrides)
        return cls(**kw)


@dataclass(frozen=True)
class EstimatedState:
    x_hat: np.ndarray
    cov: np.ndarray
    stamp: float

    @property
    def position(self) -> np.ndarray:
        return self.x_hat[0:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.x_hat[3:6]

    @property
    def yaw(self) -> float:
        return float(self.x_hat[YAW])

    @classmethod
    def from_mocap(cls, z: MocapSample, params: EkfParams) -> "EstimatedState":
        x = np.zeros(NX)
        x[0:3] = z.position
        x[YAW] = z.yaw
        return cls(x, np.diag(np.asarray(params.p0, dtype=float)), z.stamp)

    @classmethod
    def from_truth(cls, truth: RigidState, stamp: float, var: float = 1e-6) -> "EstimatedState":
        x = np.concatenate([truth.position, truth.velocity, [truth.yaw]])
        return cls(x, var * np.eye(NX), stamp)


def _assert_pd(P: np.ndarray) -> None:
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise EstimatorFailure("covariance is not positive-definite") from exc


@functools.lru_cache(maxsize=256)
def _cov_operator(dt: float, q_accel: float, q_yaw: float) -> tuple[np.ndarray, np.ndarray]:
    """(FF, q) with vec(F P F' + Q) = FF vec(P) + q for a step of length dt."""
    F = _I7.copy()
    F[0, 3] = F[1, 4] = F[2, 5] = dt
    qa = q_accel**2
    Q = np.zeros((NX, NX))
    for i in range(3):
        Q[i, i] = qa * dt**3 / 3.0
        Q[i, i + 3] = Q[i + 3, i] = qa * dt**2 / 2.0
        Q[i + 3, i + 3] = qa * dt
    Q[YAW, YAW] = q_yaw**2 * dt
    FF, q = np.kron(F, F), Q.ravel()
    FF.flags.writeable = False
    q.flags.writeable = False
    return FF, q


def ekf_predict(est: EstimatedState, imu: ImuSample, dt: float, params: EkfParams) -> EstimatedState:
    if not dt > 0:
        raise ValueError(f"dt={dt} must be > 0")
    # the state step runs on plain floats: numpy call overhead dominates at n = 7
    px, py, pz, vx, vy, vz, yaw = est.x_hat.tolist()
    ax, ay, az = imu.accel.tolist()
    h = 0.5 * dt * dt
    vals = [
        px + vx * dt + h * ax,
        py + vy * dt + h * ay,
        pz + vz * dt + h * az,
        vx + ax * dt,
        vy + ay * dt,
        vz + az * dt,
        wrap_angle(yaw + imu.gyro_z * dt),
    ]
    FF, q = _cov_operator(dt, params.q_accel, params.q_yaw)
    p = FF @ est.cov.ravel() + q
    # F P F' + Q stays PD for PD P and Q; only overflow or NaN can break it.
    # A NaN or inf anywhere in the sum makes it non-finite.
    if not math.isfinite(p.sum() + sum(vals)):
        raise EstimatorFailure("non-finite state or covariance in predict")
    return EstimatedState(np.array(vals), p.reshape(NX, NX), est.stamp + dt)


@functools.lru_cache(maxsize=64)
def _meas_variances(r_pos: float, r_yaw: float) -> np.ndarray:
    r = np.array([r_pos**2] * 3 + [r_yaw**2])
    r.flags.writeable = False
    return r


def ekf_update_mocap(est: EstimatedState, z: MocapSample, params: EkfParams) -> EstimatedState:
    """Fuse a MoCap pose. Returns ``est`` itself when the sample is dropped or gated out."""
    if z.stamp < est.stamp:
        log.debug("out-of-order mocap sample at %.6f < %.6f dropped", z.stamp, est.stamp)
        return est
    x, P = est.x_hat, est.cov
    y = np.empty(4)
    y[0:3] = z.position - x[0:3]
    y[3] = wrap_angle(z.yaw - x[YAW])
    r = _meas_variances(params.r_pos, params.r_yaw)
    PHt = P[:, _MEAS]  # P H'
    S = PHt[_MEAS] + np.diag(r)
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise EstimatorFailure("singular innovation covariance") from exc
    d2 = float(y @ S_inv @ y)
    if d2 > params.gate_sigma**2:
        log.info("mocap innovation rejected (mahalanobis %.2f > %.1f)", math.sqrt(d2), params.gate_sigma)
        return est
    K = PHt @ S_inv
    xn = x + K @ y
    xn[YAW] = wrap_angle(xn[YAW])
    A = _I7.copy()
    A[:, _MEAS] -= K  # I - K H
    Pn = A @ P @ A.T + (K * r) @ K.T  # Joseph form
    Pn = 0.5 * (Pn + Pn.T)
    _assert_pd(Pn)
    return EstimatedState(xn, Pn, z.stamp)


def state_error(est: EstimatedState, truth: RigidState) -> np.ndarray:
    e = np.empty(NX)
    e[0:3] = est.x_hat[0:3] - truth.position
    e[3:6] = est.x_hat[3:6] - truth.velocity
    e[YAW] = wrap_angle(est.x_hat[YAW] - truth.yaw)
    return e


def nees(est: EstimatedState, truth: RigidState) -> float:
    """Normalized estimation error squared."""
    e = state_error(est, truth)
    try:
        L = np.linalg.cholesky(est.cov)
    except np.linalg.LinAlgError as exc:
        raise EstimatorFailure("covariance not invertible") from exc
    w = np.linalg.solve(L, e)
    return float(w @ w)


@dataclass
class _Event:
    stamp: float
    kind: int  # 0 = imu, 1 = mocap; imu sorts first at equal stamps
    sample: object
    post: Optional[EstimatedState] = None
    state: Optional[EstimatedState] = None


@dataclass
class VehicleFilter:
    """Stateful wrapper running one EKF for one vehicle.

    Keeps a short event history so MoCap samples that arrive late (latency)
    are fused at their own stamp and later IMU steps are replayed.
    """

    params: EkfParams
    horizon: float = 0.1
    est: Optional[EstimatedState] = None
    last_update: Optional[float] = None
    rejected: int = 0
    dropped: int = 0
    _events: list = field(default_factory=list)
    _base: Optional[EstimatedState] = None
    _last_imu: Optional[ImuSample] = None

    @property
    def initialized(self) -> bool:
        return self.est is not None

    def on_imu(self, imu: ImuSample) -> None:
        if self.est is not None:
            self._run_from(self._insert(_Event(imu.stamp, 0, imu)))
        self._last_imu = imu

    def on_mocap(self, z: MocapSample) -> bool:
        """Fuse a pose sample; returns False if it was dropped or rejected."""
        if self.est is None:
            self.est = self._base = EstimatedState.from_mocap(z, self.params)
            self.last_update = z.stamp
            return True
        if self._base is not None and z.stamp < self._base.stamp:
            self.dropped += 1
            log.debug("mocap sample older than the replay horizon dropped")
            return False
        ev = _Event(z.stamp, 1, z)
        self._run_from(self._insert(ev))
        if ev.post is None:
            self.rejected += 1
            return False
        if self.last_update is None or z.stamp > self.last_update:
            self.last_update = z.stamp
        return True

    def predicted(self, stamp: float) -> EstimatedState:
        """Estimate propagated to ``stamp`` with the last IMU reading held."""
        est = self.est
        if est is None:
            raise RuntimeError("filter not initialized")
        if stamp > est.stamp + 1e-12 and self._last_imu is not None:
            est = ekf_predict(est, self._last_imu, stamp - est.stamp, self.params)
        return est

    def _insert(self, ev: _Event) -> int:
        i = len(self._events)
        while i > 0 and (self._events[i - 1].stamp, self._events[i - 1].kind) > (ev.stamp, ev.kind):
            i -= 1
        self._events.insert(i, ev)
        return i

    def _input_for(self, i: int) -> Optional[ImuSample]:
        # the IMU sample closing an interval carries the acceleration over it
        for later in self._events[i + 1:]:
            if later.kind == 0:
                return later.sample
        return self._last_imu

    def _run_from(self, i: int) -> None:
        prev = self._events[i - 1].state if i > 0 else self._base
        for j in range(i, len(self._events)):
            ev = self._events[j]
            if ev.kind == 0:
                dt = ev.stamp - prev.stamp
                if dt > 0:
                    prev = ekf_predict(prev, ev.sample, dt, self.params)
                ev.post = prev
            else:
                z = ev.sample
                if z.stamp > prev.stamp:
                    imu = self._input_for(j)
                    if imu is not None:
                        prev = ekf_predict(prev, imu, z.stamp - prev.stamp, self.params)
                upd = ekf_update_mocap(prev, z, self.params)
                # post stays None for a gated-out sample; state carries the prior
                ev.post = upd if upd is not prev else None
                prev = upd
            ev.state = prev
        self.est = prev
        if len(self._events) > 64:
            self._prune()

    def _prune(self) -> None:
        cut = self.est.stamp - self.horizon
        k = 0
        while k < len(self._events) - 1 and self._events[k].stamp < cut:
            k += 1
        if k:
            self._base = self._events[k - 1].state
            del self._events[:k]
