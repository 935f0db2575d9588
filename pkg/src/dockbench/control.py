"""Outer-loop position PID producing acceleration and yaw-rate commands.

The derivative acts on the measured velocity rather than on the error, so a
setpoint jump produces no derivative kick. Output saturation is left to the
plant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estimation import EstimatedState
from .geometry import all_finite, wrap_angle
from .world import ControlCommand, NonFiniteError

SETTLING_BAND = 0.02


@dataclass(frozen=True)
class PidGains:
    kp_pos: float = 4.0  # 1/s^2
    ki_pos: float = 0.5  # 1/s^3
    kd_pos: float = 3.0  # 1/s
    kp_yaw: float = 2.0  # 1/s
    i_limit: float = 0.5  # m*s
    # optional z-axis override; None means same as x/y
    kp_z: Optional[float] = None
    ki_z: Optional[float] = None
    kd_z: Optional[float] = None

    def validate(self, where: str = "gains") -> list[str]:
        errs = []
        for name in ("kp_pos", "ki_pos", "kd_pos", "kp_yaw", "kp_z", "ki_z", "kd_z"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                errs.append(f"{where}.{name} ({v}) must be >= 0")
        if not self.i_limit > 0:
            errs.append(f"{where}.i_limit ({self.i_limit}) must be > 0")
        return errs

    def axis_gains(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        def pick(xy, z):
            return np.array([xy, xy, xy if z is None else z])

        return (
            pick(self.kp_pos, self.kp_z),
            pick(self.ki_pos, self.ki_z),
            pick(self.kd_pos, self.kd_z),
        )

    def as_vector(self) -> np.ndarray:
        return np.array([self.kp_pos, self.ki_pos, self.kd_pos, self.kp_yaw])

    def with_vector(self, v) -> "PidGains":
        kp, ki, kd, ky = (float(x) for x in v)
        return PidGains(kp, ki, kd, ky, self.i_limit, self.kp_z, self.ki_z, self.kd_z)


@dataclass(frozen=True)
class ControllerState:
    integrator: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_error: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class StepMetrics:
    overshoot: float
    settling_time: float
    itae: float


def pid_step(
    est: EstimatedState,
    target_pos,
    target_yaw: float,
    gains: PidGains,
    state: ControllerState,
    dt: float,
) -> tuple[ControlCommand, ControllerState]:
    if not dt > 0:
        raise ValueError(f"dt={dt} must be > 0")
    target = np.asarray(target_pos, dtype=float)
    if not all_finite(est.x_hat, target, target_yaw):
        raise NonFiniteError("non-finite controller input")
    kp, ki, kd = gains.axis_gains()
    err = target - est.x_hat[0:3]
    integ = np.clip(state.integrator + err * dt, -gains.i_limit, gains.i_limit)
    accel = kp * err + ki * integ - kd * est.x_hat[3:6]
    yaw_rate = gains.kp_yaw * wrap_angle(target_yaw - est.x_hat[6])
    return ControlCommand(accel, yaw_rate), ControllerState(integ, err)


def step_response_metrics(trajectory, step: float, dt: float) -> StepMetrics:
    """Overshoot, 2 % settling time and ITAE of a sampled step response.

    Samples are taken at ``t_k = k * dt``. The settling time is the instant
    following the last sample outside the band (0 if there is none).
    """
    y = np.asarray(trajectory, dtype=float)
    if y.size == 0:
        raise ValueError("empty trajectory")
    if step == 0:
        raise ValueError("step must be non-zero")
    sign = 1.0 if step > 0 else -1.0
    peak = float(np.max(sign * y))
    overshoot = max(0.0, (peak - abs(step)) / abs(step))
    err = np.abs(step - y)
    outside = np.flatnonzero(err > SETTLING_BAND * abs(step))
    settling = 0.0 if outside.size == 0 else (outside[-1] + 1) * dt
    t = np.arange(y.size) * dt
    itae = float(np.sum(t * err) * dt)
    return StepMetrics(overshoot, float(settling), itae)
