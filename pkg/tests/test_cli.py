import csv
import json
import shutil

import pytest

from dockbench.cli import main
from dockbench.config import config_digest, load_config
from dockbench.logs import SCHEMA, LogError, audit_log, read_trial_log


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", "--preset", "sim2m", "--seed", "0", "--out", str(out)]) == 0
    return out


def lines(path):
    return path.read_text().splitlines()


def rewrite(src, dst, edit):
    objs = [json.loads(x) for x in lines(src)]
    edit(objs)
    dst.write_text("".join(json.dumps(o) + "\n" for o in objs))
    return dst


def test_run_outputs(run_dir):
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["outcome"] == "success"
    manifest = json.loads((run_dir / "manifest.json").read_text())
    # config -> digest -> manifest -> digest
    assert manifest["config_digest"] == config_digest(load_config(run_dir / "config.yaml"))
    assert manifest["seeds"] == [0]


def test_replay_fresh_log(run_dir, capsys):
    assert main(["replay", str(run_dir / "trial.jsonl")]) == 0
    assert main(["replay", str(run_dir / "trial.jsonl"), "--config", str(run_dir / "config.yaml")]) == 0


def test_log_round_trip(run_dir):
    log = read_trial_log(run_dir / "trial.jsonl")
    assert log.header["schema"] == SCHEMA and len(log.rows) == log.footer["n_ticks"]
    assert audit_log(log).ok


def test_premature_capture_is_flagged(run_dir, tmp_path):
    def inject(objs):
        rows = objs[1:-1]
        i = next(k for k, r in enumerate(rows) if r["phase"] == "align")
        j = next(k for k, r in enumerate(rows) if r["phase"] == "capture")
        for r in rows[i:j]:
            r["phase"] = "capture"
        for ev in rows[i]["events"]:
            if ev.get("type") == "phase_enter":
                ev["phase"] = "capture"

    bad = rewrite(run_dir / "trial.jsonl", tmp_path / "bad.jsonl", inject)
    assert not audit_log(read_trial_log(bad)).ok
    assert main(["replay", str(bad)]) == 3


def test_tampered_guard_values_are_flagged(run_dir, tmp_path):
    def tamper(objs):
        row = next(r for r in objs[1:-1] if r["phase"] == "align")
        row["e_b"] += 0.01

    bad = rewrite(run_dir / "trial.jsonl", tmp_path / "guards.jsonl", tamper)
    assert main(["replay", str(bad)]) == 3


def test_truncated_and_empty_logs(run_dir, tmp_path):
    cut = tmp_path / "cut.jsonl"
    cut.write_text("\n".join(lines(run_dir / "trial.jsonl")[:-1]) + "\n")
    with pytest.raises(LogError):
        read_trial_log(cut)
    assert main(["replay", str(cut)]) == 1
    short = tmp_path / "short.jsonl"
    all_lines = lines(run_dir / "trial.jsonl")
    short.write_text("\n".join(all_lines[:100] + all_lines[-1:]) + "\n")
    assert main(["replay", str(short)]) == 1
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["replay", str(empty)]) == 1


def test_schema_mismatch_refused(run_dir, tmp_path):
    def bump(objs):
        objs[0]["schema"] = "dockbench.trial/999"

    bad = rewrite(run_dir / "trial.jsonl", tmp_path / "schema.jsonl", bump)
    assert main(["replay", str(bad)]) == 1


def test_replay_with_other_config_refused(run_dir, tmp_path):
    other = tmp_path / "other.yaml"
    other.write_text("preset: real0p5m\n")
    assert main(["replay", str(run_dir / "trial.jsonl"), "--config", str(other)]) == 1


def test_bad_config_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("tol:\n  eps_b_fine: 0.2\n  eps_b_coarse: 0.05\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "eps_b_fine" in err and "eps_b_coarse" in err
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_trial_failure_exit_code(tmp_path):
    cfg = tmp_path / "slow.yaml"
    cfg.write_text("preset: sim2m\nspec:\n  g: [2.5, 2.5, 2.0]\n  v_form_leader: 0.01\n  v_form_follower: 0.01\n  t_usr: 3.0\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


@pytest.fixture(scope="module")
def campaign_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("campaign")
    assert main(["campaign", "--preset", "sim2m", "--n", "2", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_campaign_outputs(campaign_dir):
    rows = list(csv.DictReader((campaign_dir / "campaign.csv").open()))
    assert [r["seed"] for r in rows] == ["3", "4"]
    assert list(rows[0]) == ["seed", "outcome", "time_to_dock", "baseline_rms", "yaw_rms", "failure_mode"]
    summary = json.loads((campaign_dir / "campaign_summary.json").read_text())
    assert summary["n_trials"] == 2
    assert sorted(p.name for p in (campaign_dir / "traces").iterdir()) == ["trial_000003.csv", "trial_000004.csv"]


def test_report(campaign_dir, tmp_path):
    out = tmp_path / "rep"
    assert main(["report", str(campaign_dir), "--out", str(out)]) == 0
    md = (out / "report.md").read_text()
    assert "95%" in md and "time to dock" in md.lower() and "timeout" in md
    rep = json.loads((out / "report_summary.json").read_text())
    n_rows = len(lines(campaign_dir / "campaign.csv")) - 1
    assert rep["n_trials"] == n_rows
    assert rep["successes"] + sum(rep["failure_histogram"].values()) == n_rows
    assert (out / "plot_data" / "trial_000003.csv").is_file()
    assert len(lines(out / "plot_data" / "time_to_dock.csv")) == n_rows + 1


def test_report_errors(tmp_path, campaign_dir):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", str(empty)]) == 1
    assert main(["report", str(tmp_path / "nope")]) == 1
    broken = tmp_path / "broken"
    shutil.copytree(campaign_dir, broken)
    (broken / "campaign.csv").write_text("seed,outcome\n1,success\n")
    assert main(["report", str(broken)]) == 1


def test_tune_writes_monotone_history(tmp_path):
    cfg = tmp_path / "t.yaml"
    cfg.write_text("preset: sim2m\ntune:\n  bo:\n    budget: 6\n    n_init: 6\n")
    out = tmp_path / "tune.json"
    assert main(["tune", "--config", str(cfg), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    inc = [h["incumbent"] for h in doc["history"]]
    assert len(inc) == 6 and all(b <= a for a, b in zip(inc, inc[1:]))
    assert doc["best_objective"] == inc[-1]
    again = tmp_path / "tune2.json"
    assert main(["tune", "--config", str(cfg), "--out", str(again)]) == 0
    assert json.loads(again.read_text())["history"] == doc["history"]


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("DOCKBENCH_OUT", str(tmp_path / "root"))
    cfg = tmp_path / "t.yaml"
    cfg.write_text("preset: sim2m\ntune:\n  bo:\n    budget: 2\n    n_init: 2\n")
    assert main(["tune", "--config", str(cfg)]) == 0
    assert list((tmp_path / "root").glob("tune-*/tune_result.json"))
