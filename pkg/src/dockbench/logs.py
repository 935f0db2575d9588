"""JSON-lines trial logs and the guard-soundness replay audit.

A log is a header object, one object per tick, then a footer object. Floats
are written with ``repr`` (shortest round-trip form), so reading a log back
reproduces every logged value bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .bench.trial import GuardFilter, TrialRecord, raw_guards
from .config import TrialConfig, config_digest, from_dict, to_dict
from .supervisor import Phase

SCHEMA = "dockbench.trial/1"
TICK_FIELDS = (
    "t", "stage", "phase", "p_l", "v_l", "psi_l", "p_f", "v_f", "psi_f", "est_l", "est_f",
    "e_b", "e_psi", "v_rel", "e_b_true", "e_psi_true", "latched", "hold_elapsed", "t_mission",
    "cmd_l", "cmd_f", "events",
)  # fmt: skip
GUARD_MATCH_TOL = 1e-12


class LogError(ValueError):
    """Unreadable, truncated or incompatible trial log."""


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "value") and not isinstance(v, (int, float, str, bool)):
        return v.value
    if isinstance(v, float):
        return float(v)
    return v


def record_summary(rec: TrialRecord) -> dict:
    return {
        "seed": rec.seed,
        "config_digest": rec.config_digest,
        "supervisor_enabled": rec.supervisor_enabled,
        "outcome": rec.outcome,
        "success": rec.success,
        "final_phase": rec.final_phase.value if rec.final_phase else None,
        "abort_reason": rec.abort_reason.label() if rec.abort_reason else None,
        "failure_mode": rec.failure_mode.value if rec.failure_mode else None,
        "time_to_dock": rec.time_to_dock,
        "t_max": rec.t_max,
        "n_ticks": len(rec.ticks),
    }


def write_trial_log(path, cfg: TrialConfig, rec: TrialRecord) -> None:
    header = {
        "schema": SCHEMA,
        "config_digest": rec.config_digest,
        "seed": rec.seed,
        "config": to_dict(cfg),
    }
    with open(path, "w") as fh:
        fh.write(_dumps(header) + "\n")
        for row in rec.ticks:
            fh.write(_dumps(_jsonable(row)) + "\n")
        fh.write(_dumps({"end": True, **record_summary(rec)}) + "\n")


@dataclass
class TrialLog:
    header: dict
    rows: list
    footer: dict

    def config(self) -> TrialConfig:
        return from_dict(self.header["config"])


def read_trial_log(path) -> TrialLog:
    p = Path(path)
    try:
        lines = p.read_text().splitlines()
    except OSError as exc:
        raise LogError(f"{p}: {exc.strerror or exc}") from exc
    if not lines:
        raise LogError(f"{p}: empty log")
    try:
        objs = [json.loads(line) for line in lines]
    except json.JSONDecodeError as exc:
        raise LogError(f"{p}: malformed line {exc.lineno}: {exc.msg}") from exc
    header = objs[0]
    if not isinstance(header, dict) or "schema" not in header:
        raise LogError(f"{p}: missing log header")
    if header["schema"] != SCHEMA:
        raise LogError(f"{p}: schema {header['schema']!r} is not supported (expected {SCHEMA!r})")
    footer = objs[-1]
    if len(objs) < 2 or not footer.get("end"):
        raise LogError(f"{p}: truncated log (no end marker)")
    rows = objs[1:-1]
    if footer.get("n_ticks") != len(rows):
        raise LogError(f"{p}: truncated log ({len(rows)} ticks, footer says {footer.get('n_ticks')})")
    for i, row in enumerate(rows):
        missing = [f for f in TICK_FIELDS if f not in row]
        if missing:
            raise LogError(f"{p}: tick {i} lacks fields {', '.join(missing)}")
    return TrialLog(header, rows, footer)


# audit

_EDGES = {
    (None, Phase.APPROACH),
    (Phase.APPROACH, Phase.ALIGN),
    (Phase.ALIGN, Phase.CAPTURE),
    (Phase.ALIGN, Phase.APPROACH),
    (Phase.CAPTURE, Phase.SETTLE),
    (Phase.CAPTURE, Phase.APPROACH),
    (Phase.SETTLE, Phase.SUCCESS),
}
# the unsupervised arm only records the latch and the hold
_EDGES_OFF = {(None, Phase.APPROACH), (Phase.APPROACH, Phase.SETTLE), (Phase.SETTLE, Phase.SUCCESS)}


@dataclass
class AuditReport:
    violations: list = field(default_factory=list)  # (tick index, message)
    transitions: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def _close(a, b) -> bool:
    return a is not None and b is not None and abs(a - b) <= GUARD_MATCH_TOL * max(1.0, abs(b))


def audit_log(log: TrialLog, cfg: Optional[TrialConfig] = None) -> AuditReport:
    """Re-derive the gate signals from the logged estimates and check every phase change."""
    cfg = cfg or log.config()
    tol, sc = cfg.tol, cfg.supervisor
    d_dock = cfg.spec.d_dock
    supervised = cfg.supervisor_enabled
    edges = _EDGES if supervised else _EDGES_OFF
    rep = AuditReport()
    filt = GuardFilter(sc.guard_cutoff_hz, cfg.dt)
    phase: Optional[Phase] = None
    t_max = None
    coarse_since = None
    retries = sc.bounce_retries

    def bad(i, msg):
        rep.violations.append((i, msg))

    for i, row in enumerate(log.rows):
        evs = row["events"]
        window = row["e_b"] is not None
        g = None
        if window:
            if row["est_l"] is None or row["est_f"] is None:
                bad(i, "guard values logged without estimates")
                continue
            g = filt.update(*raw_guards(row["est_l"], row["est_f"], d_dock))
            for name, val in zip(("e_b", "e_psi", "v_rel"), g):
                if not _close(val, row[name]):
                    bad(i, f"logged {name}={row[name]!r} differs from recomputed {val!r}")
            if phase is Phase.ALIGN:
                if abs(g[0]) < tol.eps_b_coarse:
                    coarse_since = None
                elif coarse_since is None:
                    coarse_since = row["t_mission"]
        aborts = [e for e in evs if e["type"] == "abort"]
        contacts = [e for e in evs if e["type"] == "contact"]
        for ev in evs:
            if ev["type"] != "phase_enter":
                continue
            rep.transitions += 1
            src = Phase(ev["from"]) if ev["from"] else None
            dst = Phase(ev["phase"])
            if src != phase:
                bad(i, f"transition from {ev['from']} but the machine was in {phase.value if phase else None}")
            if dst is Phase.APPROACH and src is None:
                t_max = ev.get("t_max")
            elif dst is Phase.ABORTED:
                if not aborts:
                    bad(i, "abort transition without an abort event")
                else:
                    label = aborts[0]["reason"]
                    if label == "timeout" and not (t_max is not None and row["t_mission"] > t_max):
                        bad(i, f"timeout abort at t={row['t_mission']} before t_max={t_max}")
                    if label == "bounce_off" and (supervised or not contacts):
                        bad(i, "bounce abort without a contact event")
            elif (src, dst) not in edges:
                bad(i, f"illegal transition {src.value if src else None} -> {dst.value}")
            elif dst in (Phase.ALIGN, Phase.CAPTURE) and g is None:
                bad(i, f"{dst.value} entered on a tick without gate signals")
            elif dst is Phase.ALIGN and not abs(g[0]) < tol.eps_b_coarse:
                bad(i, f"Align entered with |e_b|={abs(g[0]):.6g} >= eps_b_coarse")
            elif dst is Phase.CAPTURE and not tol.capture_gate(*g):
                bad(i, f"Capture entered with e_b={g[0]:.6g}, e_psi={g[1]:.6g}, v_rel={g[2]:.6g} outside the gate")
            elif dst is Phase.SETTLE and not row["latched"]:
                bad(i, "Settle entered without a latch")
            elif dst is Phase.SUCCESS and not row["hold_elapsed"] > tol.t_hold:
                bad(i, f"Success after hold {row['hold_elapsed']:.6g} <= t_hold")
            elif dst is Phase.APPROACH and src is Phase.ALIGN:
                lost = coarse_since is not None and row["t_mission"] - coarse_since >= sc.debounce - 1e-9
                if not lost:
                    bad(i, "Align -> Approach regression before the debounce window elapsed")
            elif dst is Phase.APPROACH and src is Phase.CAPTURE:
                if not any(e["outcome"] == "bounce_off" for e in contacts) or retries <= 0:
                    bad(i, "retry without a bounce-off or with no retries left")
                retries -= 1
            phase = dst
            coarse_since = None
        if window and row["phase"] is not None and phase is not None and row["phase"] != phase.value:
            bad(i, f"row phase {row['phase']} disagrees with the transition history ({phase.value})")
    return rep


def effective_config(base: TrialConfig, log: TrialLog) -> TrialConfig:
    """Layer the per-run overrides recorded in the log onto a user config."""
    logged = log.config()
    return replace(base, seed=logged.seed, supervisor_enabled=logged.supervisor_enabled)


def digest_matches(cfg: TrialConfig, log: TrialLog) -> bool:
    return config_digest(cfg) == log.header["config_digest"]
