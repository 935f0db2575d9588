"""Progress-aware docking supervisor.

A guarded phase machine Approach -> Align -> Capture -> Settle -> Success,
with timeout and safety aborts from any active phase. One transition at most
per tick. The only back-edges are the Align -> Approach regression (after a
debounce window) and the Capture -> Approach retry after a bounce-off.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .world import ContractError


class Phase(str, enum.Enum):
    APPROACH = "approach"
    ALIGN = "align"
    CAPTURE = "capture"
    SETTLE = "settle"
    SUCCESS = "success"
    ABORTED = "aborted"

    @property
    def terminal(self) -> bool:
        return self in (Phase.SUCCESS, Phase.ABORTED)


ORDER = {Phase.APPROACH: 0, Phase.ALIGN: 1, Phase.CAPTURE: 2, Phase.SETTLE: 3, Phase.SUCCESS: 4}


class AbortKind(str, enum.Enum):
    TIMEOUT = "timeout"
    SAFETY_FAULT = "safety_fault"
    ESTIMATOR_FAILURE = "estimator_failure"


class SafetyKind(str, enum.Enum):
    GEOFENCE = "geofence"
    OVERSPEED = "overspeed"
    STALE_ESTIMATE = "stale_estimate"


@dataclass(frozen=True)
class AbortReason:
    kind: AbortKind
    detail: Optional[str] = None

    def label(self) -> str:
        return self.kind.value if self.detail is None else f"{self.kind.value}:{self.detail}"

    @classmethod
    def parse(cls, text: str) -> "AbortReason":
        kind, _, detail = text.partition(":")
        return cls(AbortKind(kind), detail or None)


class FailureMode(str, enum.Enum):
    TIMEOUT = "timeout"
    MISALIGNMENT = "misalignment"
    BOUNCE_OFF = "bounce_off"
    SAFETY_ABORT = "safety_abort"


@dataclass(frozen=True)
class GateTolerances:
    eps_b_coarse: float = 0.05  # m
    eps_b_fine: float = 0.005  # m
    eps_psi: float = math.radians(5.0)  # rad
    eps_v: float = 0.05  # m/s
    t_hold: float = 3.0  # s

    def validate(self) -> list[str]:
        errs = []
        for name in ("eps_b_coarse", "eps_b_fine", "eps_psi", "eps_v", "t_hold"):
            if not getattr(self, name) > 0:
                errs.append(f"tol.{name} ({getattr(self, name)}) must be > 0")
        if self.eps_b_fine > self.eps_b_coarse:
            errs.append(
                f"tol.eps_b_fine ({self.eps_b_fine}) must be <= tol.eps_b_coarse ({self.eps_b_coarse})"
            )
        return errs

    def capture_gate(self, e_b: float, e_psi: float, v_rel: float) -> bool:
        return abs(e_b) < self.eps_b_fine and abs(e_psi) < self.eps_psi and v_rel < self.eps_v


@dataclass(frozen=True)
class SupervisorConfig:
    bounce_retries: int = 1
    debounce: float = 0.2  # s, Align -> Approach regression window
    guard_cutoff_hz: float = 10.0
    # setpoint policy per phase (separation offsets relative to d_dock)
    approach_offset: float = 0.03  # m, coarse corridor standoff
    align_offset: float = 0.004  # m, inside the fine gate, outside the latch range
    capture_preload: float = 0.005  # m, commanded past contact
    approach_closing_speed: float = 0.10  # m/s
    align_closing_speed: float = 0.02  # m/s
    hover_fallback: float = 2.0  # s of hover before descent on abort

    def validate(self) -> list[str]:
        errs = []
        if self.bounce_retries < 0:
            errs.append("supervisor.bounce_retries must be >= 0")
        for name in ("debounce", "guard_cutoff_hz", "approach_closing_speed", "align_closing_speed"):
            if not getattr(self, name) > 0:
                errs.append(f"supervisor.{name} ({getattr(self, name)}) must be > 0")
        if self.hover_fallback < 0:
            errs.append("supervisor.hover_fallback must be >= 0")
        return errs


@dataclass(frozen=True)
class GuardSignals:
    e_b: float
    e_psi: float
    v_rel: float
    latched: bool
    t: float  # mission clock since Approach entry
    hold_elapsed: float = 0.0
    bounced: bool = False


@dataclass(frozen=True)
class SupervisorState:
    phase: Phase = Phase.APPROACH
    reason: Optional[AbortReason] = None
    retries_left: int = 1
    coarse_lost_since: Optional[float] = None
    entered_at: float = 0.0

    @classmethod
    def start(cls, cfg: SupervisorConfig, t: float = 0.0) -> "SupervisorState":
        return cls(Phase.APPROACH, None, cfg.bounce_retries, None, t)


@dataclass(frozen=True)
class SafetyLimits:
    geofence_min: tuple[float, float, float] = (-3.0, -3.0, -0.5)
    geofence_max: tuple[float, float, float] = (3.0, 3.0, 3.5)
    max_speed: float = 2.5  # m/s, norm of estimated velocity
    stale_after: float = 0.5  # s without an accepted MoCap update

    def validate(self) -> list[str]:
        errs = []
        if not all(lo < hi for lo, hi in zip(self.geofence_min, self.geofence_max)):
            errs.append("safety.geofence_min must be below safety.geofence_max on every axis")
        if not self.max_speed > 0:
            errs.append(f"safety.max_speed ({self.max_speed}) must be > 0")
        if not self.stale_after > 0:
            errs.append(f"safety.stale_after ({self.stale_after}) must be > 0")
        return errs


def _enter(state: SupervisorState, phase: Phase, g: GuardSignals, events: list, **changes) -> SupervisorState:
    events.append(
        {
            "type": "phase_enter",
            "t": g.t,
            "from": state.phase.value,
            "phase": phase.value,
            "e_b": g.e_b,
            "e_psi": g.e_psi,
            "v_rel": g.v_rel,
        }
    )
    return replace(state, phase=phase, entered_at=g.t, coarse_lost_since=None, **changes)


def _abort(state: SupervisorState, reason: AbortReason, g: GuardSignals, events: list) -> SupervisorState:
    events.append({"type": "abort", "t": g.t, "from": state.phase.value, "reason": reason.label()})
    return _enter(state, Phase.ABORTED, g, events, reason=reason)


def supervisor_step(
    state: SupervisorState,
    guards: GuardSignals,
    tol: GateTolerances,
    t_max: float,
    cfg: SupervisorConfig = SupervisorConfig(),
    safety: Optional[AbortReason] = None,
) -> tuple[SupervisorState, list]:
    """Advance the phase machine by one tick and return emitted events."""
    phase = state.phase
    if phase.terminal:
        raise ContractError(f"supervisor_step called in terminal phase {phase.value}")
    events: list = []
    g = guards
    if g.t > t_max:
        return _abort(state, AbortReason(AbortKind.TIMEOUT), g, events), events
    if safety is not None:
        return _abort(state, safety, g, events), events

    if phase is Phase.APPROACH:
        if abs(g.e_b) < tol.eps_b_coarse:
            state = _enter(state, Phase.ALIGN, g, events)
    elif phase is Phase.ALIGN:
        if tol.capture_gate(g.e_b, g.e_psi, g.v_rel):
            state = _enter(state, Phase.CAPTURE, g, events)
        elif abs(g.e_b) >= tol.eps_b_coarse:
            since = state.coarse_lost_since
            if since is None:
                state = replace(state, coarse_lost_since=g.t)
            elif g.t - since >= cfg.debounce:
                state = _enter(state, Phase.APPROACH, g, events)
        elif state.coarse_lost_since is not None:
            state = replace(state, coarse_lost_since=None)
    elif phase is Phase.CAPTURE:
        if g.latched:
            state = _enter(state, Phase.SETTLE, g, events)
        elif g.bounced and state.retries_left > 0:
            events.append({"type": "retry", "t": g.t, "retries_left": state.retries_left - 1})
            state = _enter(state, Phase.APPROACH, g, events, retries_left=state.retries_left - 1)
    elif phase is Phase.SETTLE:
        if g.hold_elapsed > tol.t_hold:
            state = _enter(state, Phase.SUCCESS, g, events)
    return state, events


def safety_check(
    states,
    limits: SafetyLimits,
    now: Optional[float] = None,
    last_updates=None,
) -> Optional[AbortReason]:
    """Geofence, overspeed and estimate-staleness watchdog over both vehicles."""
    lo = np.asarray(limits.geofence_min)
    hi = np.asarray(limits.geofence_max)
    for i, est in enumerate(states):
        p = est.x_hat[0:3]
        if np.any(p < lo) or np.any(p > hi):
            return AbortReason(AbortKind.SAFETY_FAULT, SafetyKind.GEOFENCE.value)
        v = est.x_hat[3:6]
        if float(v @ v) > limits.max_speed**2:
            return AbortReason(AbortKind.SAFETY_FAULT, SafetyKind.OVERSPEED.value)
        if now is not None and last_updates is not None:
            last = last_updates[i]
            if last is None or now - last > limits.stale_after:
                return AbortReason(AbortKind.SAFETY_FAULT, SafetyKind.STALE_ESTIMATE.value)
    return None


def classify_failure(trace) -> Optional[FailureMode]:
    """Failure taxonomy of a finished trial.

    ``trace`` needs ``success`` (bool), ``abort_reason`` (AbortReason or None)
    and ``events`` (list of event dicts).
    """
    if trace.success:
        return None
    reason = trace.abort_reason
    if reason is not None and reason.kind in (AbortKind.SAFETY_FAULT, AbortKind.ESTIMATOR_FAILURE):
        return FailureMode.SAFETY_ABORT
    gate_met = False
    for ev in trace.events:
        kind = ev.get("type")
        if kind == "contact":
            return FailureMode.BOUNCE_OFF
        if (kind == "phase_enter" and ev.get("phase") == Phase.CAPTURE.value) or (
            kind == "gate_eval" and ev.get("passed")
        ):
            gate_met = True
    return FailureMode.TIMEOUT if gate_met else FailureMode.MISALIGNMENT
