"""Markdown campaign report and plot-ready CSV files.

Every number in the report is derived from ``campaign.csv`` alone, so the
report can be regenerated and cross-checked without rerunning trials.
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path

from .bench.campaign import CampaignSummary, rows_from_csv, summarize


class ReportError(RuntimeError):
    pass


def _fmt(v, unit: str = "", digits: int = 3) -> str:
    return "n/a" if v is None else f"{v:.{digits}f}{unit}"


def render_markdown(s: CampaignSummary, meta: dict) -> str:
    lines = ["# Docking campaign report", ""]
    if meta:
        lines += [f"- config digest: `{meta.get('config_digest', 'n/a')}`"]
        if "seeds" in meta:
            lines += [f"- seeds: {meta['seeds'][0]}..{meta['seeds'][-1]}"]
        if "supervisor_enabled" in meta:
            lines += [f"- supervisor: {'on' if meta['supervisor_enabled'] else 'off'}"]
        lines.append("")
    lines += [
        "## Success rate",
        "",
        f"{s.successes} / {s.n_trials} trials succeeded: "
        f"{_fmt(s.success_rate)} (95% Wilson interval {_fmt(s.ci_lo)} to {_fmt(s.ci_hi)}).",
        "",
        "## Time to dock (successful trials)",
        "",
        "| statistic | value |",
        "|---|---|",
        f"| mean | {_fmt(s.time_to_dock_mean, ' s', 2)} |",
        f"| median | {_fmt(s.time_to_dock_median, ' s', 2)} |",
        f"| p95 | {_fmt(s.time_to_dock_p95, ' s', 2)} |",
        "",
        "## Settle-window consistency (successful trials)",
        "",
        f"- baseline RMS: {_fmt(s.baseline_rms, ' m', 5)}",
        f"- yaw RMS: {_fmt(s.yaw_rms, ' rad', 5)}",
        "",
        "## Failure modes",
        "",
        "| mode | count |",
        "|---|---|",
    ]
    lines += [f"| {mode} | {count} |" for mode, count in s.failure_histogram.items()]
    lines += [f"| **total failures** | {s.n_trials - s.successes} |", ""]
    return "\n".join(lines)


def build_report(campaign_dir, out_dir) -> CampaignSummary:
    src = Path(campaign_dir)
    csv_path = src / "campaign.csv"
    if not src.is_dir():
        raise ReportError(f"{src}: not a directory")
    if not csv_path.is_file():
        raise ReportError(f"{csv_path}: missing")
    try:
        rows = rows_from_csv(csv_path.read_text())
    except (ValueError, KeyError) as exc:
        raise ReportError(f"{csv_path}: {exc}") from exc
    if not rows:
        raise ReportError(f"{csv_path}: no trials")
    summary = summarize(rows)
    meta = {}
    manifest = src / "manifest.json"
    if manifest.is_file():
        meta = json.loads(manifest.read_text())

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text(render_markdown(summary, meta))
    (out / "report_summary.json").write_text(json.dumps(summary.to_dict(), indent=2) + "\n")
    plots = out / "plot_data"
    plots.mkdir(exist_ok=True)
    with open(plots / "time_to_dock.csv", "w") as fh:
        fh.write("seed,outcome,time_to_dock\n")
        for r in rows:
            fh.write(f"{r.seed},{r.outcome},{'' if r.time_to_dock is None else repr(r.time_to_dock)}\n")
    traces = src / "traces"
    if traces.is_dir():
        for f in sorted(traces.glob("*.csv")):
            shutil.copyfile(f, plots / f.name)
    return summary
