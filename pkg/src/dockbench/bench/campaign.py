"""Monte Carlo campaigns over seeds, paired ON/OFF ablations and summaries."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from ..config import TrialConfig
from ..supervisor import FailureMode
from .stats import quadratic_mean, quantile, sign_test, success_rate_ci
from .trial import TrialRecord, run_trial

CSV_FIELDS = ("seed", "outcome", "time_to_dock", "baseline_rms", "yaw_rms", "failure_mode")
TRACE_FIELDS = (
    "t", "phase", "p_l_x", "p_l_y", "p_l_z", "v_l_x", "v_l_y", "v_l_z", "psi_l",
    "p_f_x", "p_f_y", "p_f_z", "v_f_x", "v_f_y", "v_f_z", "psi_f", "e_b_true", "e_psi_true",
)  # fmt: skip
TRACE_DECIMATION = 5


def consistency_metrics(rec: TrialRecord) -> tuple[Optional[float], Optional[float]]:
    """RMS of the logged e_b and e_psi over Settle ticks; (None, None) without a Settle window."""
    if rec.ticks:
        pairs = [(r["e_b"], r["e_psi"]) for r in rec.ticks if r["phase"] == "settle"]
    else:
        pairs = list(rec.settle_errors)
    if not pairs:
        return None, None
    n = len(pairs)
    return (
        math.sqrt(sum(b * b for b, _ in pairs) / n),
        math.sqrt(sum(p * p for _, p in pairs) / n),
    )


@dataclass(frozen=True)
class TrialRow:
    seed: int
    outcome: str
    time_to_dock: Optional[float]
    baseline_rms: Optional[float]
    yaw_rms: Optional[float]
    failure_mode: Optional[str]

    @classmethod
    def from_record(cls, rec: TrialRecord) -> "TrialRow":
        b, y = consistency_metrics(rec)
        return cls(
            rec.seed,
            rec.outcome,
            rec.time_to_dock,
            b,
            y,
            None if rec.failure_mode is None else rec.failure_mode.value,
        )

    @property
    def success(self) -> bool:
        return self.outcome == "success"


@dataclass(frozen=True)
class CampaignSummary:
    n_trials: int
    successes: int
    success_rate: float
    ci_lo: float
    ci_hi: float
    time_to_dock_mean: Optional[float]
    time_to_dock_median: Optional[float]
    time_to_dock_p95: Optional[float]
    baseline_rms: Optional[float]
    yaw_rms: Optional[float]
    failure_histogram: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize(rows: Sequence[TrialRow]) -> CampaignSummary:
    """Aggregate trial rows. Consistency RMS pools per-trial RMS values quadratically."""
    n = len(rows)
    if n == 0:
        raise ValueError("cannot summarize an empty campaign")
    k = sum(r.success for r in rows)
    p, lo, hi = success_rate_ci(k, n)
    ttd = [r.time_to_dock for r in rows if r.success and r.time_to_dock is not None]
    hist = {m.value: 0 for m in FailureMode}
    for r in rows:
        if not r.success:
            hist[r.failure_mode] += 1
    return CampaignSummary(
        n_trials=n,
        successes=k,
        success_rate=p,
        ci_lo=lo,
        ci_hi=hi,
        time_to_dock_mean=statistics.fmean(ttd) if ttd else None,
        time_to_dock_median=statistics.median(ttd) if ttd else None,
        time_to_dock_p95=quantile(ttd, 0.95),
        baseline_rms=quadratic_mean([r.baseline_rms for r in rows if r.success]),
        yaw_rms=quadratic_mean([r.yaw_rms for r in rows if r.success]),
        failure_histogram=hist,
    )


def decimated_trace(rec: TrialRecord, every: int = TRACE_DECIMATION) -> list[list]:
    out = []
    for row in rec.ticks[::every]:
        out.append(
            [row["t"], row["phase"] or row["stage"] or ""]
            + row["p_l"] + row["v_l"] + [row["psi_l"]]
            + row["p_f"] + row["v_f"] + [row["psi_f"], row["e_b_true"], row["e_psi_true"]]
        )
    return out


def _worker(args) -> tuple[TrialRow, Optional[list]]:
    cfg, seed, traces = args
    rec = run_trial(cfg, seed, record_ticks=traces)
    return TrialRow.from_record(rec), (decimated_trace(rec) if traces else None)


def run_trials(
    cfg: TrialConfig, seeds: Iterable[int], parallelism: int = 1, traces: bool = False
) -> list[tuple[TrialRow, Optional[list]]]:
    """Run one trial per seed; results come back in seed order whatever the scheduling."""
    jobs = [(cfg, int(s), traces) for s in seeds]
    if parallelism <= 1 or len(jobs) <= 1:
        return [_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_worker, jobs, chunksize=1))


def run_campaign(
    cfg: TrialConfig, n: int, base_seed: int = 0, parallelism: int = 1
) -> tuple[CampaignSummary, list[TrialRow]]:
    if n < 1:
        raise ValueError(f"n={n} must be >= 1")
    cfg.checked()
    rows = [r for r, _ in run_trials(cfg, range(base_seed, base_seed + n), parallelism)]
    return summarize(rows), rows


@dataclass(frozen=True)
class AblationResult:
    on: CampaignSummary
    off: CampaignSummary
    on_rows: list
    off_rows: list
    on_only: int  # seeds where only the supervised arm succeeded
    off_only: int
    p_value: float


def run_ablation(cfg: TrialConfig, n: int, base_seed: int = 0, parallelism: int = 1) -> AblationResult:
    """Paired supervisor ON/OFF campaign over identical seeds."""
    if n < 1:
        raise ValueError(f"n={n} must be >= 1")
    seeds = range(base_seed, base_seed + n)
    on_cfg = replace(cfg, supervisor_enabled=True).checked()
    off_cfg = replace(cfg, supervisor_enabled=False).checked()
    jobs = [(on_cfg, s, False) for s in seeds] + [(off_cfg, s, False) for s in seeds]
    if parallelism <= 1:
        results = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_worker, jobs, chunksize=1))
    on_rows = [r for r, _ in results[:n]]
    off_rows = [r for r, _ in results[n:]]
    b, c, p = sign_test([r.success for r in on_rows], [r.success for r in off_rows])
    return AblationResult(summarize(on_rows), summarize(off_rows), on_rows, off_rows, b, c, p)


# csv round trip


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[TrialRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in CSV_FIELDS])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[TrialRow]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_FIELDS:
        raise ValueError(f"unexpected campaign.csv header: {reader.fieldnames}")

    def num(s):
        return None if s == "" else float(s)

    return [
        TrialRow(
            int(d["seed"]),
            d["outcome"],
            num(d["time_to_dock"]),
            num(d["baseline_rms"]),
            num(d["yaw_rms"]),
            d["failure_mode"] or None,
        )
        for d in reader
    ]
