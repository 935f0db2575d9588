"""Motion-capture and IMU emulation with a shared host clock.

Every sampler draws the same number of random variates per call whatever the
configuration, so two runs that differ only downstream of sensing (for
example the supervisor ablation) consume their random streams identically.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import wrap_angle
from .world import RigidState


@dataclass(frozen=True)
class MocapSample:
    position: np.ndarray
    yaw: float
    stamp: float


@dataclass(frozen=True)
class ImuSample:
    accel: np.ndarray
    gyro_z: float
    stamp: float


@dataclass(frozen=True)
class SensorConfig:
    mocap_rate: float = 120.0  # Hz
    imu_rate: float = 500.0  # Hz
    mocap_pos_noise: float = 0.0005  # m
    mocap_yaw_noise: float = 0.003  # rad
    accel_noise: float = 0.05  # m/s^2
    gyro_noise: float = 0.005  # rad/s
    gyro_bias: float = 0.0  # rad/s
    mocap_latency: float = 0.0  # s
    dropout_prob: float = 0.0
    clock_offset: float = 0.0  # s
    clock_drift: float = 0.0  # s/s

    def validate(self) -> list[str]:
        errs = []
        for name in ("mocap_rate", "imu_rate"):
            if not getattr(self, name) > 0:
                errs.append(f"sensors.{name} ({getattr(self, name)}) must be > 0")
        for name in ("mocap_pos_noise", "mocap_yaw_noise", "accel_noise", "gyro_noise", "mocap_latency"):
            if not getattr(self, name) >= 0:
                errs.append(f"sensors.{name} ({getattr(self, name)}) must be >= 0")
        if not 0 <= self.dropout_prob < 1:
            errs.append(f"sensors.dropout_prob ({self.dropout_prob}) must be in [0, 1)")
        if not self.clock_drift > -1:
            errs.append(f"sensors.clock_drift ({self.clock_drift}) must be > -1")
        return errs

    @classmethod
    def noise_free(cls, **overrides) -> "SensorConfig":
        base = dict(
            mocap_pos_noise=0.0,
            mocap_yaw_noise=0.0,
            accel_noise=0.0,
            gyro_noise=0.0,
            gyro_bias=0.0,
            mocap_latency=0.0,
            dropout_prob=0.0,
            clock_offset=0.0,
            clock_drift=0.0,
        )
        base.update(overrides)
        return cls(**base)


def host_timestamp(t_true: float, cfg: SensorConfig) -> float:
    return t_true * (1.0 + cfg.clock_drift) + cfg.clock_offset


def sample_mocap(
    truth: RigidState, cfg: SensorConfig, t_true: float, rng: np.random.Generator
) -> Optional[MocapSample]:
    """Noisy pose, or ``None`` on dropout. Delivery delay is handled by :class:`DelayLine`."""
    u = rng.random()
    n = rng.standard_normal(4)
    if u < cfg.dropout_prob:
        return None
    pos = truth.position + cfg.mocap_pos_noise * n[:3]
    yaw = wrap_angle(truth.yaw + cfg.mocap_yaw_noise * n[3])
    return MocapSample(pos, yaw, host_timestamp(t_true, cfg))


def sample_imu(
    truth: RigidState, applied_accel, cfg: SensorConfig, t_true: float, rng: np.random.Generator
) -> ImuSample:
    n = rng.standard_normal(4)
    accel = np.asarray(applied_accel, dtype=float) + cfg.accel_noise * n[:3]
    gyro = truth.yaw_rate + cfg.gyro_bias + cfg.gyro_noise * n[3]
    return ImuSample(accel, gyro, host_timestamp(t_true, cfg))


class DelayLine:
    """Delivery queue: items become available ``latency`` seconds after entry."""

    def __init__(self, latency: float):
        self.latency = latency
        self._heap: list[tuple[float, int, object]] = []
        self._count = 0

    def push(self, t_true: float, item) -> None:
        heapq.heappush(self._heap, (t_true + self.latency, self._count, item))
        self._count += 1

    def pop_due(self, t_true: float, eps: float = 1e-9) -> list:
        out = []
        while self._heap and self._heap[0][0] <= t_true + eps:
            out.append(heapq.heappop(self._heap)[2])
        return out

    def __len__(self) -> int:
        return len(self._heap)


class Cadence:
    """Fixed-rate trigger evaluated at simulation ticks.

    ``due(t)`` fires at most once per tick, so a sensor faster than the tick
    rate is effectively sampled at the tick rate.
    """

    def __init__(self, rate: float, t0: float = 0.0):
        self.period = 1.0 / rate
        self._k = 0
        self._t0 = t0

    def due(self, t: float, eps: float = 1e-9) -> bool:
        if t + eps < self._t0 + self._k * self.period:
            return False
        # skip any instants that fell inside the last tick
        self._k = int(math.floor((t + eps - self._t0) / self.period)) + 1
        return True

    def instants(self, t_start: float, t_end: float, eps: float = 1e-9) -> list[float]:
        """Sample instants in (t_start, t_end]; used for the sub-tick IMU stream."""
        out = []
        while True:
            s = self._t0 + self._k * self.period
            if s > t_end + eps:
                break
            if s > t_start + eps:
                out.append(s)
            self._k += 1
        return out
