"""Closed-loop execution of one docking trial through the mission script."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..config import TrialConfig, config_digest
from ..control import ControllerState, pid_step
from ..estimation import EstimatorFailure, VehicleFilter
from ..formation import (
    FOLLOWER_YAW,
    LEADER_YAW,
    baseline_error,
    formation_targets,
    mission_timeout,
    pair_targets,
    relative_speed,
    sync_speed,
    yaw_error,
)
from ..geometry import wrap_angle
from ..sensing import Cadence, DelayLine, host_timestamp, sample_imu, sample_mocap
from ..supervisor import (
    AbortKind,
    AbortReason,
    FailureMode,
    GuardSignals,
    Phase,
    SupervisorState,
    classify_failure,
    safety_check,
    supervisor_step,
)
from ..world import (
    ContactOutcome,
    ControlCommand,
    NonFiniteError,
    RigidState,
    capture,
    check_contact,
    face_gap,
    joint_accel,
    resolve_bounce,
    sample_disturbance,
    step_latched_pair,
    step_vehicle,
)

MAX_SIM_TIME = 900.0  # s, hard stop for a misconfigured script


@dataclass
class TrialRecord:
    config_digest: str
    seed: int
    supervisor_enabled: bool
    ticks: list = field(default_factory=list)
    events: list = field(default_factory=list)
    success: bool = False
    final_phase: Optional[Phase] = None
    abort_reason: Optional[AbortReason] = None
    failure_mode: Optional[FailureMode] = None
    time_to_dock: Optional[float] = None
    t_max: Optional[float] = None
    dock_start: Optional[float] = None
    settle_errors: list = field(default_factory=list)  # (e_b, e_psi) per Settle tick

    @property
    def outcome(self) -> str:
        return "success" if self.success else self.failure_mode.value


class GuardFilter:
    """First-order low-pass on (e_b, e_psi, v_rel); yaw filtered on the circle."""

    def __init__(self, cutoff_hz: float, dt: float):
        self.alpha = 1.0 - math.exp(-2.0 * math.pi * cutoff_hz * dt)
        self.value: Optional[tuple[float, float, float]] = None

    def update(self, e_b: float, e_psi: float, v_rel: float) -> tuple[float, float, float]:
        if self.value is None:
            self.value = (e_b, e_psi, v_rel)
        else:
            b, p, v = self.value
            a = self.alpha
            self.value = (b + a * (e_b - b), wrap_angle(p + a * wrap_angle(e_psi - p)), v + a * (v_rel - v))
        return self.value


def raw_guards(est_l: np.ndarray, est_f: np.ndarray, d_dock: float) -> tuple[float, float, float]:
    return (
        baseline_error(est_l[0:3], est_f[0:3], d_dock),
        yaw_error(float(est_l[6]), float(est_f[6])),
        relative_speed(est_l[3:6], est_f[3:6]),
    )


def _vec(a) -> list:
    return [float(x) for x in a]


class _Vehicle:
    def __init__(self, cfg: TrialConfig, start, yaw, gains, seeds):
        self.truth = RigidState.at(start, yaw)
        self.filter = VehicleFilter(cfg.ekf, horizon=max(0.1, cfg.sensors.mocap_latency + 0.05))
        self.delay = DelayLine(cfg.sensors.mocap_latency)
        self.mocap_clock = Cadence(cfg.sensors.mocap_rate)
        self.imu_clock = Cadence(cfg.sensors.imu_rate)
        self.rng_mocap = np.random.default_rng(seeds[0])
        self.rng_imu = np.random.default_rng(seeds[1])
        self.rng_dist = np.random.default_rng(seeds[2])
        self.gains = gains
        self.ctrl = ControllerState()
        self.disturbance = np.zeros(3)
        self.applied = np.zeros(3)
        self.est = None

    def sense(self, cfg: TrialConfig, t: float, dt: float) -> None:
        s = cfg.sensors
        if t > 0:
            for ts in self.imu_clock.instants(t - dt, t):
                self.filter.on_imu(sample_imu(self.truth, self.applied, s, ts, self.rng_imu))
        if self.mocap_clock.due(t):
            z = sample_mocap(self.truth, s, t, self.rng_mocap)
            if z is not None:
                self.delay.push(t, z)
        for z in self.delay.pop_due(t):
            self.filter.on_mocap(z)
        self.est = self.filter.predicted(host_timestamp(t, s)) if self.filter.initialized else None

    def command(self, target, yaw, dt) -> ControlCommand:
        if self.est is None:
            return ControlCommand.zero()
        cmd, self.ctrl = pid_step(self.est, target, yaw, self.gains, self.ctrl, dt)
        return cmd

    def position(self) -> np.ndarray:
        return self.est.x_hat[0:3] if self.est is not None else self.truth.position


def _approach(value: float, target: float, rate: float, dt: float) -> float:
    step = rate * dt
    if value > target:
        return max(target, value - step)
    return min(target, value + step)


class _Dock:
    """Docking-window state: setpoint policy plus the phase bookkeeping."""

    def __init__(self, cfg: TrialConfig, t0: float, p_l, p_f):
        self.cfg = cfg
        self.t0 = t0
        self.center0 = 0.5 * (p_l + p_f)
        self.g = np.asarray(cfg.spec.g, dtype=float)
        self.v_sync = sync_speed(cfg.spec)
        self.t_max = mission_timeout(cfg.spec, p_l, p_f)
        self.sep = float(np.linalg.norm(p_f - p_l))
        self.sup = SupervisorState.start(cfg.supervisor, 0.0)
        self.guard = GuardFilter(cfg.supervisor.guard_cutoff_hz, cfg.dt)
        self.gate_logged = False
        self.done = False
        self.failed_bounce = False

    def center_ref(self, tau: float) -> np.ndarray:
        d = self.g - self.center0
        dist = float(np.linalg.norm(d))
        if dist == 0.0:
            return self.g.copy()
        return self.center0 + min(1.0, tau * self.v_sync / dist) * d

    def targets(self, tau: float):
        cfg, sc = self.cfg, self.cfg.supervisor
        d = cfg.spec.d_dock
        if not cfg.supervisor_enabled:
            ft = formation_targets(cfg.spec)
            return ft.p_L_star, ft.p_F_star
        phase = self.sup.phase
        if phase is Phase.APPROACH:
            self.sep = _approach(self.sep, d + sc.approach_offset, sc.approach_closing_speed, cfg.dt)
        elif phase is Phase.ALIGN:
            self.sep = _approach(self.sep, d + sc.align_offset, sc.align_closing_speed, cfg.dt)
        elif phase is Phase.CAPTURE:
            self.sep = _approach(self.sep, d - sc.capture_preload, sc.align_closing_speed, cfg.dt)
        else:
            self.sep = d
        return pair_targets(self.center_ref(tau), self.sep)


def run_trial(cfg: TrialConfig, seed: Optional[int] = None, record_ticks: bool = True) -> TrialRecord:
    """Run one trial; deterministic in (cfg, seed)."""
    cfg.checked()
    seed = cfg.seed if seed is None else seed
    dt = cfg.dt
    ss = np.random.SeedSequence(seed)
    kids = ss.spawn(6)
    L = _Vehicle(cfg, cfg.init.leader_start, cfg.init.leader_yaw, cfg.gains_leader, kids[0:3])
    F = _Vehicle(cfg, cfg.init.follower_start, cfg.init.follower_yaw, cfg.gains_follower, kids[3:6])
    rec = TrialRecord(config_digest(cfg), seed, cfg.supervisor_enabled)
    latch = cfg.world.latch
    d_dock = cfg.spec.d_dock

    latched = False
    armed = True
    latch_time = None
    rest_offset = None
    stages = list(cfg.script.stages)
    si = 0
    stage_t0 = 0.0
    stage_ctx: dict = {}
    dock: Optional[_Dock] = None
    home = None
    fallback = False  # docking failed: hover, then land
    finished = False
    k = 0

    def end_docking(phase: Phase, reason: Optional[AbortReason], t: float) -> None:
        nonlocal fallback
        dock.done = True
        rec.final_phase = phase
        rec.abort_reason = reason
        rec.success = phase is Phase.SUCCESS
        fallback = not rec.success

    while not finished:
        t = k * dt
        events: list = []
        bounced = False

        # contacts resolve on truth at the start of the tick
        v_pre = (L.truth.velocity, F.truth.velocity)
        if not latched:
            gap = face_gap(L.truth, F.truth, d_dock)
            if gap > latch.engage_distance:
                armed = True
            elif armed:
                armed = False
                outcome = check_contact(L.truth, F.truth, latch, d_dock)
                if outcome is ContactOutcome.LATCHED:
                    latched = True
                    latch_time = t
                    L.truth, F.truth = capture(L.truth, F.truth, latch)
                    rest_offset = F.truth.position - L.truth.position
                else:
                    bounced = True
                    L.truth, F.truth = resolve_bounce(L.truth, F.truth, latch.restitution)
                events.append({"type": "contact", "t": t, "outcome": outcome.value, "gap": gap})

        abort: Optional[AbortReason] = None
        try:
            L.sense(cfg, t, dt)
            F.sense(cfg, t, dt)
        except EstimatorFailure as exc:
            abort = AbortReason(AbortKind.ESTIMATOR_FAILURE, None)
            events.append({"type": "abort", "t": t, "reason": abort.label(), "detail": str(exc)})

        have_est = L.est is not None and F.est is not None
        if abort is None and have_est:
            now = host_timestamp(t, cfg.sensors)
            abort = safety_check(
                (L.est, F.est), cfg.safety, now, (L.filter.last_update, F.filter.last_update)
            )
            if abort is not None and (dock is None or dock.done):
                # outside the docking window a fault forces the fallback too
                if not rec.success and not fallback:
                    events.append({"type": "abort", "t": t, "reason": abort.label()})
                    rec.abort_reason = abort
                    rec.final_phase = Phase.ABORTED if dock is None else rec.final_phase
                    fallback = True
                    stage_ctx = {}
                abort = None if (dock is not None and dock.done) else abort

        if abort is not None and abort.kind is AbortKind.ESTIMATOR_FAILURE:
            if dock is not None and not dock.done:
                end_docking(Phase.ABORTED, abort, t)
            else:
                rec.abort_reason = abort
                rec.final_phase = rec.final_phase or Phase.ABORTED
            rec.events.extend(events)
            break

        stage = stages[si] if not fallback else None
        phase_val = None
        guards_row = (None, None, None)
        hold_elapsed = t - latch_time if latched else 0.0

        # setpoints
        if fallback:
            if "fallback_t0" not in stage_ctx:
                stage_ctx = {
                    "fallback_t0": t,
                    "pl": L.position().copy(),
                    "pf": F.position().copy(),
                    "yl": L.est.yaw if L.est is not None else L.truth.yaw,
                    "yf": F.est.yaw if F.est is not None else F.truth.yaw,
                }
                events.append({"type": "fallback", "t": t})
            tau = t - stage_ctx["fallback_t0"]
            descend = max(0.0, tau - cfg.supervisor.hover_fallback) * 0.4
            tl, tf = stage_ctx["pl"].copy(), stage_ctx["pf"].copy()
            tl[2] = max(0.0, tl[2] - descend)
            tf[2] = max(0.0, tf[2] - descend)
            yl, yf = stage_ctx["yl"], stage_ctx["yf"]
            if tl[2] == 0.0 and tf[2] == 0.0 and tau > cfg.supervisor.hover_fallback + 1.0:
                finished = True
        else:
            tau = t - stage_t0
            kind = stage.kind
            stage_done = False
            yl, yf = LEADER_YAW, FOLLOWER_YAW
            if kind == "takeoff":
                if not stage_ctx:
                    stage_ctx = {"pl": np.asarray(cfg.init.leader_start, float), "pf": np.asarray(cfg.init.follower_start, float)}
                tl, tf = stage_ctx["pl"].copy(), stage_ctx["pf"].copy()
                tl[2] = min(stage.alt, tl[2] + stage.rate * tau)
                tf[2] = min(stage.alt, tf[2] + stage.rate * tau)
                yl, yf = cfg.init.leader_yaw, cfg.init.follower_yaw
                stage_done = tau >= stage.alt / stage.rate + stage.duration
            elif kind == "formation_entry":
                if not stage_ctx:
                    c = 0.5 * (L.position() + F.position())
                    stage_ctx = {"c": c}
                    home = c.copy()
                tl, tf = pair_targets(stage_ctx["c"], d_dock + stage.staging_gap)
                stage_done = tau >= stage.duration
            elif kind == "docking_window":
                if dock is None:
                    dock = _Dock(cfg, t, L.position().copy(), F.position().copy())
                    rec.t_max = dock.t_max
                    rec.dock_start = t
                    events.append(
                        {"type": "phase_enter", "t": 0.0, "from": None, "phase": Phase.APPROACH.value, "t_max": dock.t_max}
                    )
                tau_d = t - dock.t0
                e_b, e_psi, v_rel = dock.guard.update(*raw_guards(L.est.x_hat, F.est.x_hat, d_dock))
                guards_row = (e_b, e_psi, v_rel)
                g = GuardSignals(e_b, e_psi, v_rel, latched, tau_d, hold_elapsed, bounced)
                if cfg.supervisor_enabled:
                    before = dock.sup.phase
                    dock.sup, evs = supervisor_step(dock.sup, g, cfg.tol, dock.t_max, cfg.supervisor, abort)
                    events.extend(evs)
                    if dock.sup.phase is Phase.SETTLE and before is not Phase.SETTLE and rec.time_to_dock is None:
                        rec.time_to_dock = tau_d
                    if dock.sup.phase.terminal:
                        end_docking(dock.sup.phase, dock.sup.reason, t)
                else:
                    _direct_step(dock, g, cfg, abort, events, rec, end_docking, t)
                phase_val = (dock.sup.phase.value if not dock.done or rec.final_phase is None else rec.final_phase.value)
                tl, tf = dock.targets(tau_d)
                stage_done = dock.done and rec.success
            elif kind == "hold":
                ft = formation_targets(cfg.spec)
                tl, tf = ft.p_L_star, ft.p_F_star
                stage_done = tau >= stage.duration
            elif kind == "return":
                if not stage_ctx:
                    c = 0.5 * (L.position() + F.position())
                    dest = np.array([home[0], home[1], c[2]]) if home is not None else c
                    stage_ctx = {"c": c, "dest": dest, "sep": d_dock, "T": float(np.linalg.norm(dest - c)) / sync_speed(cfg.spec)}
                frac = min(1.0, tau / stage_ctx["T"]) if stage_ctx["T"] > 0 else 1.0
                c = stage_ctx["c"] + frac * (stage_ctx["dest"] - stage_ctx["c"])
                tl, tf = pair_targets(c, stage_ctx["sep"])
                stage_done = tau >= stage_ctx["T"] + stage.duration
            else:  # land
                if not stage_ctx:
                    stage_ctx = {"pl": L.position().copy(), "pf": F.position().copy()}
                tl, tf = stage_ctx["pl"].copy(), stage_ctx["pf"].copy()
                z0 = max(tl[2], tf[2])
                tl[2] = max(0.0, tl[2] - stage.rate * tau)
                tf[2] = max(0.0, tf[2] - stage.rate * tau)
                stage_done = tau >= z0 / stage.rate + stage.duration
            if stage_done:
                events.append({"type": "stage_end", "t": t, "stage": kind})
                si += 1
                stage_t0 = t + dt
                stage_ctx = {}
                if si >= len(stages):
                    finished = True
            if dock is not None and dock.done and not rec.success and not fallback:
                fallback = True
                stage_ctx = {}

        if latched and latch.hold_rigid:
            # a rigid pair gets mutually consistent setpoints
            off = rest_offset
            c = 0.5 * (tl + tf)
            tl, tf = c - 0.5 * off, c + 0.5 * off
        cmd_l = L.command(tl, yl, dt)
        cmd_f = F.command(tf, yf, dt)

        if phase_val == Phase.SETTLE.value:
            rec.settle_errors.append((guards_row[0], guards_row[1]))
        if record_ticks:
            e_b_true = baseline_error(L.truth.position, F.truth.position, d_dock)
            e_psi_true = yaw_error(L.truth.yaw, F.truth.yaw)
            rec.ticks.append(
                {
                    "t": t,
                    "stage": "fallback" if fallback and stage is None else (stage.kind if stage else None),
                    "phase": phase_val,
                    "p_l": _vec(L.truth.position),
                    "v_l": _vec(L.truth.velocity),
                    "psi_l": L.truth.yaw,
                    "p_f": _vec(F.truth.position),
                    "v_f": _vec(F.truth.velocity),
                    "psi_f": F.truth.yaw,
                    "est_l": _vec(L.est.x_hat) if L.est is not None else None,
                    "est_f": _vec(F.est.x_hat) if F.est is not None else None,
                    "e_b": guards_row[0],
                    "e_psi": guards_row[1],
                    "v_rel": guards_row[2],
                    "e_b_true": e_b_true,
                    "e_psi_true": e_psi_true,
                    "latched": latched,
                    "hold_elapsed": hold_elapsed,
                    "t_mission": (t - dock.t0) if dock is not None and phase_val is not None else None,
                    "cmd_l": _vec(cmd_l.accel) + [cmd_l.yaw_rate],
                    "cmd_f": _vec(cmd_f.accel) + [cmd_f.yaw_rate],
                    "events": events,
                }
            )
        rec.events.extend(events)
        if finished or t >= MAX_SIM_TIME:
            break

        # plant
        wd = cfg.world.disturbance
        L.disturbance = sample_disturbance(L.disturbance, wd, dt, L.rng_dist)
        F.disturbance = sample_disturbance(F.disturbance, wd, dt, F.rng_dist)
        try:
            if latched and latch.hold_rigid:
                L.truth, F.truth = step_latched_pair(
                    L.truth, F.truth, (cmd_l, cmd_f), cfg.world, dt, (L.disturbance, F.disturbance)
                )
            elif latched:
                j = joint_accel(L.truth, F.truth, rest_offset, latch)
                L.truth = step_vehicle(L.truth, cmd_l, cfg.world, L.disturbance - j, dt)
                F.truth = step_vehicle(F.truth, cmd_f, cfg.world, F.disturbance + j, dt)
            else:
                L.truth = step_vehicle(L.truth, cmd_l, cfg.world, L.disturbance, dt)
                F.truth = step_vehicle(F.truth, cmd_f, cfg.world, F.disturbance, dt)
        except NonFiniteError as exc:
            reason = AbortReason(AbortKind.ESTIMATOR_FAILURE, "non_finite")
            rec.events.append({"type": "abort", "t": t, "reason": reason.label(), "detail": str(exc)})
            if dock is not None and not dock.done:
                end_docking(Phase.ABORTED, reason, t)
            else:
                rec.abort_reason = reason
            break
        L.applied = (L.truth.velocity - v_pre[0]) / dt
        F.applied = (F.truth.velocity - v_pre[1]) / dt
        k += 1

    if rec.final_phase is None:
        rec.final_phase = Phase.ABORTED
    rec.failure_mode = classify_failure(rec)
    return rec


def _direct_step(dock: _Dock, g: GuardSignals, cfg: TrialConfig, abort, events, rec, end_docking, t) -> None:
    """Bookkeeping for the supervisor-OFF arm: no gating and no retry."""
    tau = g.t
    phase = dock.sup.phase
    if not dock.gate_logged and cfg.tol.capture_gate(g.e_b, g.e_psi, g.v_rel):
        dock.gate_logged = True
        events.append({"type": "gate_eval", "t": tau, "passed": True, "e_b": g.e_b, "e_psi": g.e_psi, "v_rel": g.v_rel})

    def enter(new: Phase, **extra):
        events.append({"type": "phase_enter", "t": tau, "from": phase.value, "phase": new.value, **extra})
        dock.sup = SupervisorState(new, extra.get("_reason"), 0, None, tau)

    if tau > dock.t_max:
        reason = AbortReason(AbortKind.TIMEOUT)
        events.append({"type": "abort", "t": tau, "from": phase.value, "reason": reason.label()})
        enter(Phase.ABORTED)
        end_docking(Phase.ABORTED, reason, t)
    elif abort is not None:
        events.append({"type": "abort", "t": tau, "from": phase.value, "reason": abort.label()})
        enter(Phase.ABORTED)
        end_docking(Phase.ABORTED, abort, t)
    elif phase is Phase.APPROACH and g.latched:
        enter(Phase.SETTLE)
        rec.time_to_dock = tau
    elif phase is Phase.APPROACH and g.bounced:
        events.append({"type": "abort", "t": tau, "from": phase.value, "reason": "bounce_off"})
        enter(Phase.ABORTED)
        end_docking(Phase.ABORTED, None, t)
    elif phase is Phase.SETTLE and g.hold_elapsed > cfg.tol.t_hold:
        enter(Phase.SUCCESS)
        end_docking(Phase.SUCCESS, None, t)
