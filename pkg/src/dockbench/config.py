"""Trial configuration: dataclasses, YAML loading, validation, digests, presets."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .control import PidGains
from .estimation import EkfParams
from .formation import FormationSpec
from .sensing import SensorConfig
from .supervisor import GateTolerances, SafetyLimits, SupervisorConfig
from .tuning import BoConfig, GainBounds, StepScenario
from .world import LatchParams, OuParams, WorldParams

STAGE_KINDS = ("takeoff", "formation_entry", "docking_window", "hold", "return", "land")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class Stage:
    kind: str
    alt: float = 0.0  # takeoff altitude (m)
    duration: float = 0.0  # hold time, or settle time after a ramp (s)
    rate: float = 0.5  # climb / descent rate (m/s)
    staging_gap: float = 0.6  # formation entry: extra separation beyond d_dock (m)


def default_stages(alt: float) -> tuple[Stage, ...]:
    return (
        Stage("takeoff", alt=alt, duration=2.0, rate=0.5),
        Stage("formation_entry", duration=6.0, staging_gap=0.6),
        Stage("docking_window"),
        Stage("hold", duration=4.0),
        Stage("return", duration=1.0),
        Stage("land", duration=1.0, rate=0.4),
    )


@dataclass(frozen=True)
class MissionScript:
    stages: tuple[Stage, ...] = default_stages(2.0)

    def validate(self) -> list[str]:
        errs = []
        kinds = [s.kind for s in self.stages]
        for i, k in enumerate(kinds):
            if k not in STAGE_KINDS:
                errs.append(f"script.stages[{i}].kind ({k!r}) must be one of {', '.join(STAGE_KINDS)}")
        if kinds.count("docking_window") != 1:
            errs.append("script.stages must contain exactly one docking_window")
        if not kinds or kinds[0] != "takeoff":
            errs.append("script.stages must start with takeoff")
        if not kinds or kinds[-1] != "land":
            errs.append("script.stages must end with land")
        for i, s in enumerate(self.stages):
            if s.kind == "takeoff" and not s.alt > 0:
                errs.append(f"script.stages[{i}].alt ({s.alt}) must be > 0")
            if s.kind in ("takeoff", "land") and not s.rate > 0:
                errs.append(f"script.stages[{i}].rate ({s.rate}) must be > 0")
            if s.duration < 0:
                errs.append(f"script.stages[{i}].duration ({s.duration}) must be >= 0")
        return errs


@dataclass(frozen=True)
class InitialConditions:
    leader_start: tuple[float, float, float] = (-0.6, 0.0, 0.0)
    follower_start: tuple[float, float, float] = (0.6, 0.0, 0.0)
    leader_yaw: float = 0.0
    follower_yaw: float = 0.0


@dataclass(frozen=True)
class TuneConfig:
    bounds: GainBounds = field(default_factory=GainBounds)
    bo: BoConfig = field(default_factory=BoConfig)
    scenario: StepScenario = field(default_factory=StepScenario)


@dataclass(frozen=True)
class TrialConfig:
    world: WorldParams = field(default_factory=WorldParams)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    ekf: EkfParams = field(default_factory=EkfParams)
    gains_leader: PidGains = field(default_factory=PidGains)
    gains_follower: PidGains = field(default_factory=PidGains)
    spec: FormationSpec = field(default_factory=FormationSpec)
    tol: GateTolerances = field(default_factory=GateTolerances)
    supervisor: SupervisorConfig = field(default_factory=SupervisorConfig)
    safety: SafetyLimits = field(default_factory=SafetyLimits)
    script: MissionScript = field(default_factory=MissionScript)
    init: InitialConditions = field(default_factory=InitialConditions)
    tune: TuneConfig = field(default_factory=TuneConfig)
    dt: float = 0.01
    seed: int = 0
    supervisor_enabled: bool = True

    def validate(self) -> list[str]:
        errs = []
        if not 0 < self.dt <= 0.05:
            errs.append(f"dt ({self.dt}) must be in (0, 0.05]")
        errs += self.world.validate() + self.sensors.validate() + self.ekf.validate()
        errs += self.gains_leader.validate("gains_leader") + self.gains_follower.validate("gains_follower")
        errs += self.spec.validate() + self.tol.validate() + self.supervisor.validate()
        errs += self.safety.validate() + self.script.validate()
        errs += self.tune.bounds.validate() + self.tune.bo.validate()
        return errs

    def checked(self) -> "TrialConfig":
        errs = self.validate()
        if errs:
            raise ConfigError(errs)
        return self


# (de)serialization


def to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def _strip_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (Union, getattr(types, "UnionType", Union)):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def _coerce(tp, value, path: str, problems: list[str]):
    tp, optional = _strip_optional(tp)
    if value is None:
        if optional:
            return None
        problems.append(f"{path}: missing value")
        return None
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            problems.append(f"{path}: expected a mapping")
            return None
        return _build(tp, value, path, problems)
    origin = typing.get_origin(tp)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            problems.append(f"{path}: expected a list")
            return None
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]", problems) for i, v in enumerate(value))
        if len(args) != len(value):
            problems.append(f"{path}: expected {len(args)} entries, got {len(value)}")
            return None
        return tuple(_coerce(a, v, f"{path}[{i}]", problems) for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            problems.append(f"{path}: expected true/false, got {value!r}")
        return bool(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{path}: expected an integer, got {value!r}")
            return 0
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{path}: expected a number, got {value!r}")
            return 0.0
        return float(value)
    if tp is str:
        return str(value)
    return value


def _build(cls, data: dict, path: str, problems: list[str]):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            problems.append(f"{path + '.' if path else ''}{key}: unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            sub = f"{path + '.' if path else ''}{f.name}"
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], sub, problems)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        problems.append(f"{path or '<root>'}: {exc}")
        return None


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _line_map(node, prefix: str = "", out: Optional[dict] = None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            key = f"{prefix}[{i}]"
            out[key] = v.start_mark.line + 1
            _line_map(v, key, out)
    return out


def _annotate(problems: list[str], lines: dict, source: str) -> list[str]:
    out = []
    for p in problems:
        # earliest field named in the message wins; longer paths break ties
        hits = [(p.index(key), -len(key), line) for key, line in lines.items() if key in p]
        out.append(f"{source}:{min(hits)[2]}: {p}" if hits else f"{source}: {p}")
    return out


def from_dict(data: dict, base: Optional[dict] = None) -> TrialConfig:
    merged = _merge(base or {}, data or {})
    problems: list[str] = []
    cfg = _build(TrialConfig, merged, "", problems)
    if problems:
        raise ConfigError(problems)
    return cfg.checked()


def load_config(path, preset: Optional[str] = None) -> TrialConfig:
    """Read a YAML config, optionally layered over a named preset."""
    p = Path(path)
    text = p.read_text()
    try:
        data = yaml.safe_load(text) or {}
        lines = _line_map(yaml.compose(text)) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"{p}: YAML parse error: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError([f"{p}: top level must be a mapping"])
    named = data.pop("preset", None)
    preset = preset or named
    base = to_dict(PRESETS[preset]()) if preset else None
    try:
        return from_dict(data, base)
    except ConfigError as exc:
        raise ConfigError(_annotate(exc.problems, lines, str(p))) from None


def dump_config(cfg: TrialConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def canonical_json(cfg: TrialConfig) -> str:
    return json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_digest(cfg: TrialConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


# presets


def sim2m() -> TrialConfig:
    """Noise-free simulation profile: formation center at 2.0 m altitude."""
    return TrialConfig(
        world=WorldParams(latch=LatchParams(), disturbance=OuParams(sigma=0.0, theta=1.0)),
        sensors=SensorConfig.noise_free(),
        spec=FormationSpec(g=(0.5, 0.3, 2.0), d_dock=0.46),
        script=MissionScript(default_stages(2.0)),
    )


def real0p5m() -> TrialConfig:
    """Lab-like profile: 0.5 m altitude, MoCap/IMU noise, latency and mild wind."""
    sensors = SensorConfig(mocap_latency=0.005)
    return TrialConfig(
        world=WorldParams(disturbance=OuParams(sigma=0.05, theta=1.0)),
        sensors=sensors,
        ekf=EkfParams.matched(sensors),
        spec=FormationSpec(g=(0.5, 0.3, 0.5), d_dock=0.46),
        script=MissionScript(default_stages(0.5)),
    )


PRESETS = {"sim2m": sim2m, "real0p5m": real0p5m}
