"""Ground-truth plant for the two vehicles.

Point-mass translational dynamics with first-order yaw, integrated with
semi-implicit Euler at a fixed step. The magnetic latch is a binary capture
predicate; once captured the pair either moves as one rigid body or, with
``hold_rigid`` off, through a spring-damper joint.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import all_finite, wrap_angle

MAX_DT = 0.05


class ContractError(RuntimeError):
    """A function was called outside its precondition."""


class NonFiniteError(ValueError):
    pass


class ContactOutcome(enum.Enum):
    NO_CONTACT = "no_contact"
    LATCHED = "latched"
    BOUNCE_OFF = "bounce_off"


@dataclass(frozen=True)
class RigidState:
    position: np.ndarray
    velocity: np.ndarray
    yaw: float = 0.0
    yaw_rate: float = 0.0

    @classmethod
    def at(cls, position, yaw: float = 0.0) -> "RigidState":
        return cls(np.asarray(position, dtype=float).copy(), np.zeros(3), wrap_angle(yaw), 0.0)

    def is_finite(self) -> bool:
        return all_finite(self.position, self.velocity, self.yaw, self.yaw_rate)


@dataclass(frozen=True)
class ControlCommand:
    accel: np.ndarray
    yaw_rate: float = 0.0

    @classmethod
    def zero(cls) -> "ControlCommand":
        return cls(np.zeros(3), 0.0)


@dataclass(frozen=True)
class LatchParams:
    engage_distance: float = 0.003  # m, face gap that allows capture
    max_latch_speed: float = 0.10  # m/s
    max_latch_yaw: float = math.radians(10.0)
    hold_rigid: bool = True
    restitution: float = 0.5
    # compliant joint, only used when hold_rigid is False
    stiffness: float = 100.0  # 1/s^2
    damping: float = 8.0  # 1/s
    # follower velocity increment applied at the capture instant (m/s)
    capture_kick: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def validate(self) -> list[str]:
        errs = []
        if not self.engage_distance > 0:
            errs.append(f"world.latch.engage_distance ({self.engage_distance}) must be > 0")
        if not self.max_latch_speed > 0:
            errs.append(f"world.latch.max_latch_speed ({self.max_latch_speed}) must be > 0")
        if not 0 < self.max_latch_yaw < math.pi / 2:
            errs.append(f"world.latch.max_latch_yaw ({self.max_latch_yaw}) must be in (0, pi/2)")
        if not 0 <= self.restitution <= 1:
            errs.append(f"world.latch.restitution ({self.restitution}) must be in [0, 1]")
        if self.stiffness < 0 or self.damping < 0:
            errs.append("world.latch.stiffness and world.latch.damping must be >= 0")
        return errs


@dataclass(frozen=True)
class OuParams:
    sigma: float = 0.0  # m/s^2
    theta: float = 1.0  # 1/s

    def validate(self) -> list[str]:
        errs = []
        if not self.sigma >= 0:
            errs.append(f"world.disturbance.sigma ({self.sigma}) must be >= 0")
        if not self.theta > 0:
            errs.append(f"world.disturbance.theta ({self.theta}) must be > 0")
        return errs


@dataclass(frozen=True)
class WorldParams:
    max_accel: float = 3.0  # m/s^2 per axis
    max_speed: float = 3.0  # m/s per axis
    drag_coeff: float = 0.1  # 1/s
    max_yaw_rate: float = 1.5  # rad/s
    latch: LatchParams = field(default_factory=LatchParams)
    disturbance: OuParams = field(default_factory=OuParams)

    def validate(self) -> list[str]:
        errs = []
        for name in ("max_accel", "max_speed", "max_yaw_rate"):
            if not getattr(self, name) > 0:
                errs.append(f"world.{name} ({getattr(self, name)}) must be > 0")
        if not self.drag_coeff >= 0:
            errs.append(f"world.drag_coeff ({self.drag_coeff}) must be >= 0")
        return errs + self.latch.validate() + self.disturbance.validate()


def _check_dt(dt: float) -> None:
    if not (0 < dt <= MAX_DT):
        raise ContractError(f"dt={dt} outside (0, {MAX_DT}]")


def _check_inputs(state: RigidState, cmd: ControlCommand) -> None:
    if not state.is_finite():
        raise NonFiniteError(f"non-finite vehicle state: {state}")
    if not all_finite(cmd.accel, cmd.yaw_rate):
        raise NonFiniteError(f"non-finite command: {cmd}")


def saturate(cmd: ControlCommand, params: WorldParams) -> tuple[np.ndarray, float]:
    a = np.clip(cmd.accel, -params.max_accel, params.max_accel)
    r = min(max(cmd.yaw_rate, -params.max_yaw_rate), params.max_yaw_rate)
    return a, r


def step_vehicle(
    state: RigidState,
    cmd: ControlCommand,
    params: WorldParams,
    disturbance_accel,
    dt: float,
) -> RigidState:
    """Advance one vehicle by ``dt`` with semi-implicit Euler."""
    _check_dt(dt)
    _check_inputs(state, cmd)
    a, r = saturate(cmd, params)
    v = state.velocity + (a - params.drag_coeff * state.velocity + disturbance_accel) * dt
    v = np.clip(v, -params.max_speed, params.max_speed)
    return RigidState(state.position + v * dt, v, wrap_angle(state.yaw + r * dt), r)


def face_gap(leader: RigidState, follower: RigidState, d_dock: float) -> float:
    d = follower.position - leader.position
    return math.sqrt(float(d @ d)) - d_dock


def check_contact(
    leader: RigidState, follower: RigidState, params: LatchParams, d_dock: float
) -> ContactOutcome:
    if not (leader.is_finite() and follower.is_finite()):
        raise NonFiniteError("non-finite state in contact check")
    if face_gap(leader, follower, d_dock) > params.engage_distance:
        return ContactOutcome.NO_CONTACT
    dv = follower.velocity - leader.velocity
    slow = math.sqrt(float(dv @ dv)) <= params.max_latch_speed
    aligned = abs(wrap_angle((follower.yaw - leader.yaw) - math.pi)) <= params.max_latch_yaw
    return ContactOutcome.LATCHED if slow and aligned else ContactOutcome.BOUNCE_OFF


def resolve_bounce(
    leader: RigidState, follower: RigidState, restitution: float
) -> tuple[RigidState, RigidState]:
    """Reflect the closing component of relative velocity along the baseline axis.

    Equal masses, so each vehicle takes half of the velocity change. Pairs that
    are already separating are returned unchanged.
    """
    d = follower.position - leader.position
    dist = math.sqrt(float(d @ d))
    if dist == 0.0:
        return leader, follower
    n = d / dist
    closing = float((follower.velocity - leader.velocity) @ n)
    if closing >= 0.0:
        return leader, follower
    dv = -(1.0 + restitution) * closing * n
    lv = leader.velocity - 0.5 * dv
    fv = follower.velocity + 0.5 * dv
    return (
        RigidState(leader.position, lv, leader.yaw, leader.yaw_rate),
        RigidState(follower.position, fv, follower.yaw, follower.yaw_rate),
    )


def capture(
    leader: RigidState, follower: RigidState, params: LatchParams
) -> tuple[RigidState, RigidState]:
    """Apply the capture instant: optional kick, then inelastic merge when rigid."""
    kick = np.asarray(params.capture_kick, dtype=float)
    fv = follower.velocity + kick
    lv = leader.velocity
    if params.hold_rigid:
        vm = 0.5 * (lv + fv)
        rm = 0.5 * (leader.yaw_rate + follower.yaw_rate)
        return (
            RigidState(leader.position, vm.copy(), leader.yaw, rm),
            RigidState(follower.position, vm.copy(), follower.yaw, rm),
        )
    return leader, RigidState(follower.position, fv, follower.yaw, follower.yaw_rate)


def step_latched_pair(
    leader: RigidState,
    follower: RigidState,
    cmds: tuple[ControlCommand, ControlCommand],
    params: WorldParams,
    dt: float,
    disturbances=None,
    latched: bool = True,
) -> tuple[RigidState, RigidState]:
    """Move a rigidly latched pair as one body of two equal masses.

    The common acceleration is the mean of both saturated commands (and of
    the disturbances, if given). Relative position and relative yaw are
    carried over unchanged, so the latch geometry is preserved exactly.
    """
    if not latched or not params.latch.hold_rigid:
        raise ContractError("step_latched_pair requires a rigidly latched pair")
    _check_dt(dt)
    _check_inputs(leader, cmds[0])
    _check_inputs(follower, cmds[1])
    aL, rL = saturate(cmds[0], params)
    aF, rF = saturate(cmds[1], params)
    a = 0.5 * (aL + aF)
    if disturbances is not None:
        a = a + 0.5 * (np.asarray(disturbances[0]) + np.asarray(disturbances[1]))
    v = 0.5 * (leader.velocity + follower.velocity)
    v = v + (a - params.drag_coeff * v) * dt
    v = np.clip(v, -params.max_speed, params.max_speed)
    r = 0.5 * (rL + rF)
    shift = v * dt
    dyaw = r * dt
    return (
        RigidState(leader.position + shift, v.copy(), wrap_angle(leader.yaw + dyaw), r),
        RigidState(follower.position + shift, v.copy(), wrap_angle(follower.yaw + dyaw), r),
    )


def joint_accel(
    leader: RigidState, follower: RigidState, rest_offset: np.ndarray, latch: LatchParams
) -> np.ndarray:
    """Spring-damper acceleration acting on the follower (leader gets the negative)."""
    stretch = (follower.position - leader.position) - rest_offset
    return -latch.stiffness * stretch - latch.damping * (follower.velocity - leader.velocity)


def sample_disturbance(prev, params: OuParams, dt: float, rng: np.random.Generator) -> np.ndarray:
    """One Euler-Maruyama step of a zero-mean Ornstein-Uhlenbeck process per axis."""
    if not dt > 0:
        raise ContractError(f"dt={dt} must be > 0")
    n = rng.standard_normal(3)
    return np.asarray(prev, dtype=float) * (1.0 - params.theta * dt) + params.sigma * math.sqrt(dt) * n
