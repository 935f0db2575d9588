"""``dockbench`` command line: run, campaign, tune, replay, report.

Exit codes: 0 success, 1 tool error, 2 trial failure, 3 audit violation.
The default output root is ``$DOCKBENCH_OUT`` (or ``./runs``).
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from . import __version__
from .bench.campaign import rows_to_csv, run_ablation, run_trials, summarize
from .bench.trial import run_trial
from .config import (
    PRESETS,
    ConfigError,
    TrialConfig,
    config_digest,
    dump_config,
    load_config,
    to_dict,
)
from .logs import (
    LogError,
    audit_log,
    digest_matches,
    effective_config,
    read_trial_log,
    record_summary,
    write_trial_log,
)
from .report import ReportError, build_report
from .tuning import bo_tune

EXIT_OK, EXIT_TOOL, EXIT_TRIAL, EXIT_AUDIT = 0, 1, 2, 3
OUT_ENV = "DOCKBENCH_OUT"

log = logging.getLogger("dockbench")


class ToolError(RuntimeError):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def resolve_config(config_path: Optional[str], preset: Optional[str], seed=None, supervisor=None) -> TrialConfig:
    if config_path:
        p = Path(config_path)
        if not p.is_file():
            raise ToolError(f"{p}: no such config file")
        cfg = load_config(p, preset)
    else:
        cfg = PRESETS[preset or "sim2m"]()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if supervisor is not None:
        cfg = replace(cfg, supervisor_enabled=(supervisor == "on"))
    return cfg.checked()


def _out_dir(out: Optional[str], kind: str, cfg: TrialConfig) -> Path:
    if out:
        p = Path(out)
    else:
        root = Path(os.environ.get(OUT_ENV, "runs"))
        p = root / f"{kind}-{config_digest(cfg)[:10]}-s{cfg.seed}"
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def write_manifest(out: Path, cfg: TrialConfig, seeds, started: str, outputs, **extra) -> dict:
    manifest = {
        "tool_version": __version__,
        "config_digest": config_digest(cfg),
        "seeds": list(seeds),
        "supervisor_enabled": cfg.supervisor_enabled,
        "start_time": started,
        "end_time": _now(),
        "outputs": sorted(str(o) for o in outputs),
        "config": to_dict(cfg),
        **extra,
    }
    _write_json(out / "manifest.json", manifest)
    (out / "config.yaml").write_text(dump_config(cfg))
    return manifest


# commands


def cmd_run(config_path, seed, out_dir, preset=None, supervisor=None) -> int:
    started = _now()
    cfg = resolve_config(config_path, preset, seed, supervisor)
    out = _out_dir(out_dir, "run", cfg)
    rec = run_trial(cfg)
    write_trial_log(out / "trial.jsonl", cfg, rec)
    summary = record_summary(rec)
    _write_json(out / "summary.json", summary)
    write_manifest(out, cfg, [cfg.seed], started, ["trial.jsonl", "summary.json", "config.yaml"])
    print(f"outcome: {summary['outcome']}  time_to_dock: {summary['time_to_dock']}  -> {out}")
    return EXIT_OK if rec.success else EXIT_TRIAL


def _write_campaign(out: Path, cfg: TrialConfig, results, started: str, traces: bool) -> dict:
    rows = [r for r, _ in results]
    (out / "campaign.csv").write_text(rows_to_csv(rows))
    summary = summarize(rows)
    _write_json(out / "campaign_summary.json", summary.to_dict())
    outputs = ["campaign.csv", "campaign_summary.json", "config.yaml"]
    if traces:
        from .bench.campaign import TRACE_FIELDS

        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for row, trace in results:
            name = f"trial_{row.seed:06d}.csv"
            with open(tdir / name, "w") as fh:
                fh.write(",".join(TRACE_FIELDS) + "\n")
                for vals in trace:
                    fh.write(",".join(v if isinstance(v, str) else repr(float(v)) for v in vals) + "\n")
            outputs.append(f"traces/{name}")
    write_manifest(out, cfg, [r.seed for r in rows], started, outputs)
    return summary.to_dict()


def cmd_campaign(
    config_path, n, base_seed, parallelism, out_dir, preset=None, supervisor=None, traces=True, ablation=False
) -> int:
    started = _now()
    if n < 1:
        raise ToolError(f"--n must be >= 1 (got {n})")
    cfg = resolve_config(config_path, preset, base_seed, supervisor)
    out = _out_dir(out_dir, "ablation" if ablation else "campaign", cfg)
    seeds = range(cfg.seed, cfg.seed + n)
    if not ablation:
        results = run_trials(cfg, seeds, parallelism, traces)
        s = _write_campaign(out, cfg, results, started, traces)
        print(f"{s['successes']}/{s['n_trials']} succeeded (95% CI {s['ci_lo']:.3f}..{s['ci_hi']:.3f}) -> {out}")
        return EXIT_OK
    res = run_ablation(cfg, n, cfg.seed, parallelism)
    for arm, rows in (("on", res.on_rows), ("off", res.off_rows)):
        sub = out / arm
        sub.mkdir(exist_ok=True)
        arm_cfg = replace(cfg, supervisor_enabled=(arm == "on"))
        _write_campaign(sub, arm_cfg, [(r, None) for r in rows], started, False)
    result = {
        "n_pairs": n,
        "on_successes": res.on.successes,
        "off_successes": res.off.successes,
        "on_only": res.on_only,
        "off_only": res.off_only,
        "sign_test_p": res.p_value,
    }
    _write_json(out / "ablation.json", result)
    print(
        f"ON {res.on.successes}/{n}, OFF {res.off.successes}/{n}; discordant {res.on_only}:{res.off_only}, "
        f"sign test p={res.p_value:.3g} -> {out}"
    )
    return EXIT_OK


def tune_document(cfg: TrialConfig, result) -> dict:
    inc = result.incumbents()
    return {
        "tool_version": __version__,
        "config_digest": config_digest(cfg),
        "best_gains": dataclasses.asdict(result.best_gains),
        "best_objective": result.best_objective,
        "bounds": to_dict(cfg.tune.bounds),
        "bo": to_dict(cfg.tune.bo),
        "scenario": to_dict(cfg.tune.scenario),
        "history": [
            {"iteration": i, "gains": dataclasses.asdict(g), "objective": j, "incumbent": inc[i]}
            for i, (g, j) in enumerate(result.history)
        ],
    }


def cmd_tune(config_path, out_path, preset=None, seed=None) -> int:
    cfg = resolve_config(config_path, preset, seed)
    bo = cfg.tune.bo if seed is None else replace(cfg.tune.bo, seed=seed)
    result = bo_tune(cfg, cfg.tune.bounds, bo, cfg.gains_leader, cfg.tune.scenario)
    doc = tune_document(replace(cfg, tune=replace(cfg.tune, bo=bo)), result)
    if out_path:
        target = Path(out_path)
    else:
        target = _out_dir(None, "tune", cfg) / "tune_result.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    _write_json(target, doc)
    print(f"best objective {result.best_objective:.6g} with {doc['best_gains']} -> {target}")
    return EXIT_OK


def cmd_replay(trial_log, config_path=None) -> int:
    lg = read_trial_log(trial_log)
    cfg = lg.config()
    if config_path:
        cfg = effective_config(resolve_config(config_path, None), lg)
        if not digest_matches(cfg, lg):
            raise ToolError(f"{config_path} does not match the config recorded in {trial_log}")
    rep = audit_log(lg, cfg)
    if rep.ok:
        print(f"audit ok: {rep.transitions} transitions over {len(lg.rows)} ticks")
        return EXIT_OK
    for i, msg in rep.violations:
        print(f"tick {i} (t={lg.rows[i]['t']:.2f}): {msg}", file=sys.stderr)
    print(f"audit failed: {len(rep.violations)} violation(s)", file=sys.stderr)
    return EXIT_AUDIT


def cmd_report(campaign_dir, out_dir=None) -> int:
    out = Path(out_dir) if out_dir else Path(campaign_dir) / "report"
    s = build_report(campaign_dir, out)
    print(f"report for {s.n_trials} trials -> {out / 'report.md'}")
    return EXIT_OK


# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dockbench", description="Dual-quadrotor midair docking benchmark.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed_help="rng seed"):
        p.add_argument("--config", help="YAML trial config")
        p.add_argument("--preset", choices=sorted(PRESETS), help="named base config")
        p.add_argument("--seed", type=int, help=seed_help)
        p.add_argument("--out", help=f"output directory (default under ${OUT_ENV} or ./runs)")

    p = sub.add_parser("run", help="run one trial")
    common(p)
    p.add_argument("--supervisor", choices=("on", "off"))

    p = sub.add_parser("campaign", help="run a Monte Carlo campaign")
    common(p, "first seed; trials use seed..seed+n-1")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--supervisor", choices=("on", "off"))
    p.add_argument("--ablation", action="store_true", help="paired supervisor ON/OFF over the same seeds")
    p.add_argument("--no-traces", dest="traces", action="store_false", help="skip per-trial trace CSVs")

    p = sub.add_parser("tune", help="Bayesian-optimize PID gains")
    common(p, "optimizer seed")

    p = sub.add_parser("replay", help="audit a trial log")
    p.add_argument("trial_log")
    p.add_argument("--config", help="config to audit against (must match the log)")

    p = sub.add_parser("report", help="markdown report and plot data for a campaign directory")
    p.add_argument("campaign_dir")
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.config, args.seed, args.out, args.preset, args.supervisor)
        if args.command == "campaign":
            return cmd_campaign(
                args.config, args.n, args.seed, args.parallelism, args.out,
                args.preset, args.supervisor, args.traces, args.ablation,
            )  # fmt: skip
        if args.command == "tune":
            return cmd_tune(args.config, args.out, args.preset, args.seed)
        if args.command == "replay":
            return cmd_replay(args.trial_log, args.config)
        if args.command == "report":
            return cmd_report(args.campaign_dir, args.out)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
    except (ToolError, LogError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_TOOL


if __name__ == "__main__":
    sys.exit(main())
