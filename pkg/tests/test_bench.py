import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dockbench.bench.campaign import (
    TrialRow,
    consistency_metrics,
    rows_from_csv,
    rows_to_csv,
    run_campaign,
    summarize,
)
from dockbench.bench.stats import quantile, sign_test, success_rate_ci
from dockbench.bench.trial import GuardFilter, TrialRecord, run_trial
from dockbench.config import sim2m
from dockbench.formation import FormationSpec
from dockbench.supervisor import FailureMode, Phase


def wilson_by_hand(k, n, z=1.96):
    # independent form: roots of (p - phat)^2 = z^2 p (1 - p) / n
    phat = k / n
    a = 1 + z * z / n
    b = -(2 * phat + z * z / n)
    c = phat * phat
    disc = math.sqrt(b * b - 4 * a * c)
    return (-b - disc) / (2 * a), (-b + disc) / (2 * a)


def test_wilson_oracles():
    p, lo, hi = success_rate_ci(9, 10)
    assert p == 0.9
    assert lo == pytest.approx(0.596, abs=1e-3) and hi == pytest.approx(0.982, abs=1e-3)
    p, lo, hi = success_rate_ci(0, 10)
    assert lo == 0.0 and hi == pytest.approx(0.278, abs=1e-3)
    assert success_rate_ci(10, 10)[2] == 1.0


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 500), st.data())
def test_wilson_matches_quadratic_roots(n, data):
    k = data.draw(st.integers(0, n))
    p, lo, hi = success_rate_ci(k, n)
    rlo, rhi = wilson_by_hand(k, n)
    assert lo == pytest.approx(max(rlo, 0.0), abs=1e-12)
    assert hi == pytest.approx(min(rhi, 1.0), abs=1e-12)
    assert 0.0 <= lo <= p <= hi <= 1.0


def test_wilson_rejects_bad_counts():
    with pytest.raises(ValueError):
        success_rate_ci(3, 2)
    with pytest.raises(ValueError):
        success_rate_ci(0, 0)


def test_sign_test():
    on = [True] * 10 + [False] * 5
    off = [False] * 10 + [False] * 5
    b, c, p = sign_test(on, off)
    assert (b, c) == (10, 0) and p == pytest.approx(2 * 0.5**10)
    assert sign_test([True, False], [True, False]) == (0, 0, 1.0)
    with pytest.raises(ValueError):
        sign_test([True], [])


def test_quantile_matches_numpy():
    xs = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6]
    for q in (0.0, 0.25, 0.5, 0.95, 1.0):
        assert quantile(xs, q) == pytest.approx(np.quantile(xs, q))
    assert quantile([], 0.5) is None


def rec_with(ticks):
    return TrialRecord("x", 0, True, ticks=ticks)


def test_consistency_metrics_examples():
    rows = [{"phase": "settle", "e_b": 0.004, "e_psi": 0.01}] * 5
    assert consistency_metrics(rec_with(rows)) == (pytest.approx(0.004), pytest.approx(0.01))
    alt = [{"phase": "settle", "e_b": s * 0.003, "e_psi": 0.0} for s in (1, -1, 1, -1)]
    assert consistency_metrics(rec_with(alt))[0] == pytest.approx(0.003)
    assert consistency_metrics(rec_with([{"phase": "align", "e_b": 1.0, "e_psi": 0.0}])) == (None, None)


def test_guard_filter_converges_and_wraps():
    f = GuardFilter(10.0, 0.01)
    for _ in range(200):
        out = f.update(0.02, math.pi - 0.01, 0.1)
    assert out[0] == pytest.approx(0.02) and out[2] == pytest.approx(0.1)
    # crossing the branch cut moves the short way
    f = GuardFilter(10.0, 0.01)
    f.update(0.0, math.pi - 0.01, 0.0)
    _, e, _ = f.update(0.0, -math.pi + 0.01, 0.0)
    assert abs(abs(e) - math.pi) < 0.02


def row(seed, outcome, ttd=None, b=None, y=None):
    fm = None if outcome == "success" else outcome
    return TrialRow(seed, outcome, ttd, b, y, fm)


def test_summary_invariants_and_csv_round_trip():
    rows = [
        row(0, "success", 6.25, 0.002, 0.01),
        row(1, "success", 7.5, 0.004, 0.02),
        row(2, "timeout"),
        row(3, "bounce_off"),
    ]
    s = summarize(rows)
    assert s.successes == 2 and s.n_trials == 4
    assert sum(s.failure_histogram.values()) + s.successes == s.n_trials
    assert set(s.failure_histogram) == {m.value for m in FailureMode}
    assert s.time_to_dock_median == pytest.approx(6.875)
    assert s.baseline_rms == pytest.approx(math.sqrt((0.002**2 + 0.004**2) / 2))
    back = rows_from_csv(rows_to_csv(rows))
    assert back == rows and summarize(back) == s
    with pytest.raises(ValueError):
        rows_from_csv("a,b\n1,2\n")


@pytest.fixture(scope="module")
def nominal():
    return run_trial(sim2m(), 0)


def test_nominal_trial_succeeds(nominal):
    r = nominal
    assert r.success and r.outcome == "success" and r.final_phase is Phase.SUCCESS
    assert r.time_to_dock is not None and r.failure_mode is None
    ts = [t["t"] for t in r.ticks]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    b_rms, y_rms = consistency_metrics(r)
    assert b_rms <= 0.005 and y_rms <= math.radians(5)


def test_trial_bit_identical(nominal):
    again = run_trial(sim2m(), 0)
    assert again.ticks == nominal.ticks and again.events == nominal.events


def test_unreachable_goal_times_out():
    cfg = sim2m()
    cfg = replace(cfg, spec=replace(cfg.spec, g=(2.5, 2.5, 2.0), v_form_leader=0.01, v_form_follower=0.01, t_usr=3.0))
    r = run_trial(cfg, 0, record_ticks=False)
    assert not r.success and r.failure_mode in (FailureMode.TIMEOUT, FailureMode.MISALIGNMENT)
    assert r.abort_reason.kind.value == "timeout" and r.final_phase is Phase.ABORTED


def test_ablation_prefix_is_paired():
    from dockbench.config import real0p5m

    cfg = real0p5m()
    on = run_trial(cfg, 4)
    off = run_trial(replace(cfg, supervisor_enabled=False), 4)
    pre_on = [t for t in on.ticks if t["stage"] in ("takeoff", "formation_entry")]
    pre_off = [t for t in off.ticks if t["stage"] in ("takeoff", "formation_entry")]
    assert pre_on and pre_on == pre_off


def test_campaign_summary_recomputable_from_csv():
    summary, rows = run_campaign(sim2m(), 2, base_seed=0)
    assert summary.n_trials == 2
    assert summarize(rows_from_csv(rows_to_csv(rows))) == summary
    with pytest.raises(ValueError):
        run_campaign(sim2m(), 0)


def test_formation_spec_default_docking_distance():
    assert FormationSpec().d_dock == 0.46
