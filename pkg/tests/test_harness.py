"""Config schema, run orchestration, evaluation, calibration, and reports."""

import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from touchdoor import harness, td3
from touchdoor.errors import CalibrationError, ConfigError, ContractError
from touchdoor.harness import (EpisodeStats, RunConfig, bootstrap_improvement,
                               cmd_calibrate, cmd_eval, cmd_report, cmd_train,
                               config_from_dict, config_hash, config_to_dict,
                               load_config, train_single_run)
from touchdoor.randomize import PARAM_FIELDS, RandConfig


def _tiny_dict(**overrides):
    d = {
        "td3": {"hidden": [8, 8], "batch_size": 8, "buffer_capacity": 500,
                "warmup_steps": 10, "publish_every": 5},
        "seeds": [0],
        "episodes": 2,
        "max_steps": 30,
        "workers": 1,
    }
    d.update(overrides)
    return d


def _train_tiny(tmp_path, **overrides):
    cfg = config_from_dict(_tiny_dict(**overrides))
    return cfg, cmd_train(cfg, out=tmp_path / "runs", deterministic=True)


# ------------------------------------------------------------------- schema

def test_config_defaults_and_roundtrip():
    cfg = config_from_dict({})
    assert cfg == RunConfig()
    again = config_from_dict(config_to_dict(cfg))
    assert config_hash(again) == config_hash(cfg)


def test_config_rejects_unknown_keys_with_path():
    with pytest.raises(ConfigError, match="config: unknown keys \\['budget'\\]"):
        config_from_dict({"budget": 3})
    with pytest.raises(ConfigError, match="td3: unknown keys \\['lr'\\]"):
        config_from_dict({"td3": {"lr": 0.001}})
    with pytest.raises(ConfigError, match="tactile"):
        config_from_dict({"tactile": {"treshold": 0.2}})


def test_config_rejects_wrong_types():
    with pytest.raises(ConfigError, match="config.episodes"):
        config_from_dict({"episodes": "many"})
    with pytest.raises(ConfigError, match="boolean"):
        config_from_dict({"episodes": True})
    with pytest.raises(ConfigError, match="td3.gamma"):
        config_from_dict({"td3": {"gamma": "0.99"}})
    with pytest.raises(ConfigError, match="tactile.enabled"):
        config_from_dict({"tactile": {"enabled": 1}})
    with pytest.raises(ConfigError, match="config.seeds\\[1\\]"):
        config_from_dict({"seeds": [0, 1.5]})
    with pytest.raises(ConfigError, match="expected an object"):
        config_from_dict({"td3": [1, 2]})


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError, match="seeds"):
        config_from_dict({"seeds": []})
    with pytest.raises(ConfigError, match="duplicate"):
        config_from_dict({"seeds": [3, 3]})
    with pytest.raises(ConfigError, match="episodes"):
        config_from_dict({"episodes": 0})
    with pytest.raises(ConfigError, match="flip_prob"):
        config_from_dict({"tactile": {"flip_prob": 1.5}})
    with pytest.raises(ConfigError, match="delay_prob"):
        config_from_dict({"randomization": {"delay_prob": -0.1}})
    with pytest.raises(ConfigError, match="hidden"):
        config_from_dict({"td3": {"hidden": []}})


def test_config_hash_sensitivity():
    base = config_from_dict({})
    assert config_hash(base) == config_hash(config_from_dict({}))
    changed = config_from_dict({"episodes": 1999})
    assert config_hash(changed) != config_hash(base)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)


def test_config_conditions_follow_tactile_flag():
    assert config_from_dict({}).conditions() == ("tactile", "no_tactile")
    off = config_from_dict({"tactile": {"enabled": False}})
    assert off.conditions() == ("no_tactile",)


# ------------------------------------------------------------------ bridges

def test_build_env_config_flows_through():
    cfg = config_from_dict({"environment": {"dt": 0.005},
                            "max_steps": 77,
                            "tactile": {"kappa": 0.4, "signal_scale": 1.2}})
    on = harness.build_env_config(cfg, tactile_on=True)
    off = harness.build_env_config(cfg, tactile_on=False)
    assert on.tactile_enabled and not off.tactile_enabled
    assert on.dt == 0.005 and on.max_steps == 77
    assert on.kappa == 0.4 and on.signal_scale == 1.2


def test_build_rand_config_disabled_is_exact():
    off = harness.build_rand_config(config_from_dict({"randomization": {"enabled": False}}))
    assert off == RandConfig.disabled()
    on = harness.build_rand_config(config_from_dict(
        {"randomization": {"delay_prob": 0.25}, "tactile": {"flip_prob": 0.01}}))
    assert on.delay_prob == 0.25 and on.flip_prob == 0.01
    assert on.knob_friction.enabled


def test_build_td3_config_budget():
    cfg = config_from_dict({"episodes": 7, "max_steps": 50})
    td3_cfg = harness.build_td3_config(cfg, obs_dim=55, act_dim=8)
    assert td3_cfg.total_steps == 350
    assert td3_cfg.obs_dim == 55 and td3_cfg.act_dim == 8


# ------------------------------------------------------------------ training

def test_train_single_run_artifacts(tmp_path):
    cfg, dirs = _train_tiny(tmp_path)
    assert [d.name for d in dirs] == ["tactile-seed0", "no_tactile-seed0"]
    run = dirs[0]
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["config_hash"] == config_hash(cfg)
    assert manifest["obs_dim"] == 55
    assert manifest["env_steps"] == cfg.episodes * cfg.max_steps
    assert (run / "checkpoint" / "manifest.json").exists()

    plain = json.loads((dirs[1] / "manifest.json").read_text())
    assert plain["obs_dim"] == 55 - 30

    with open(run / "training_log.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == manifest["episodes"] > 0
    assert list(rows[0].keys()) == list(harness._LOG_COLUMNS)
    for row in rows:
        assert float(row["wall_time_s"]) == 0.0  # deterministic mode
        draw = {name: float(row[name]) for name in PARAM_FIELDS}
        rand = RandConfig()
        for name, value in draw.items():
            rng = getattr(rand, name)
            assert rng.lo <= value <= rng.hi


def test_train_rerun_is_byte_identical(tmp_path):
    cfg = config_from_dict(_tiny_dict())
    a = cmd_train(cfg, out=tmp_path / "a", deterministic=True)
    b = cmd_train(cfg, out=tmp_path / "b", deterministic=True)
    for run_a, run_b in zip(a, b):
        for name in ("training_log.csv", "checkpoint/manifest.json",
                     "checkpoint/actor.tdnn", "checkpoint/critic1.tdnn"):
            assert (run_a / name).read_bytes() == (run_b / name).read_bytes()


def test_train_skips_completed_runs(tmp_path):
    cfg, dirs = _train_tiny(tmp_path)
    marker = dirs[0] / "checkpoint" / "actor.tdnn"
    before = marker.stat().st_mtime_ns
    again = cmd_train(cfg, out=tmp_path / "runs", deterministic=True)
    assert again == dirs
    assert marker.stat().st_mtime_ns == before


def test_train_refuses_config_drift(tmp_path):
    cfg, dirs = _train_tiny(tmp_path)
    drifted = config_from_dict(_tiny_dict(episodes=3))
    with pytest.raises(ConfigError, match="refusing"):
        train_single_run(drifted, 0, "tactile", tmp_path / "runs")


def test_train_seed_override(tmp_path):
    cfg = config_from_dict(_tiny_dict(seeds=[0, 1]))
    dirs = cmd_train(cfg, seed=1, out=tmp_path / "runs", deterministic=True)
    assert [d.name for d in dirs] == ["tactile-seed1", "no_tactile-seed1"]


def test_train_no_tactile_config_trains_one_arm(tmp_path):
    cfg, dirs = _train_tiny(tmp_path, tactile={"enabled": False})
    assert [d.name for d in dirs] == ["no_tactile-seed0"]


def test_checkpoint_snapshots_need_single_worker(tmp_path):
    cfg = config_from_dict(_tiny_dict(checkpoint_every=1, workers=2))
    with pytest.raises(ConfigError, match="single worker"):
        train_single_run(cfg, 0, "tactile", tmp_path / "runs")


def test_train_resumes_after_interruption(tmp_path, monkeypatch):
    cfg = config_from_dict(_tiny_dict(episodes=4, checkpoint_every=1))
    real_train = td3.train

    def dies_halfway(env_factory, td3_cfg, **kw):
        half = replace(td3_cfg, total_steps=td3_cfg.total_steps // 2)
        real_train(env_factory, half, **kw)
        raise RuntimeError("interrupted")

    monkeypatch.setattr(harness.td3, "train", dies_halfway)
    with pytest.raises(RuntimeError, match="interrupted"):
        train_single_run(cfg, 0, "tactile", tmp_path / "runs", deterministic=True)
    monkeypatch.setattr(harness.td3, "train", real_train)

    run = tmp_path / "runs" / "tactile-seed0"
    assert json.loads((run / "manifest.json").read_text())["status"] == "running"
    assert (run / "resume" / "trainer_counters.json").exists()

    finished = train_single_run(cfg, 0, "tactile", tmp_path / "runs",
                                deterministic=True)
    manifest = json.loads((finished / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["env_steps"] == cfg.episodes * cfg.max_steps
    with open(run / "training_log.csv", newline="") as f:
        episodes = [int(row["episode"]) for row in csv.DictReader(f)]
    assert episodes == sorted(set(episodes))  # no duplicates after the splice
    assert episodes[-1] == manifest["episodes"]


# ---------------------------------------------------------------- evaluation

def test_eval_artifacts_and_determinism(tmp_path):
    cfg, dirs = _train_tiny(tmp_path)
    run = dirs[0]
    summary = cmd_eval(run, domain="nominal", episodes=2, seed=7)
    assert summary["condition"] == "tactile"
    assert 0.0 <= summary["final_angle_deg_mean"] <= 90.0
    assert (run / "eval_nominal.csv").exists()
    assert (run / "eval_nominal_summary.json").exists()
    assert (run / "eval_nominal_trajectory.csv").exists()
    assert (run / "eval_nominal_tactile.csv").exists()

    with open(run / "eval_nominal.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    assert list(rows[0].keys()) == list(harness._EVAL_COLUMNS)

    again = cmd_eval(run, domain="nominal", episodes=2, seed=7,
                     out=tmp_path / "elsewhere")
    assert again == summary
    assert (tmp_path / "elsewhere" / "eval_nominal.csv").read_bytes() == \
        (run / "eval_nominal.csv").read_bytes()


def test_eval_all_domains_run(tmp_path):
    cfg, dirs = _train_tiny(tmp_path)
    for domain in harness.EVAL_DOMAINS:
        summary = cmd_eval(dirs[1], domain=domain, episodes=1, seed=3)
        assert summary["domain"] == domain
    assert not (dirs[1] / "eval_transfer_tactile.csv").exists()  # no bits logged


def test_eval_zero_step_budget(tmp_path):
    cfg, dirs = _train_tiny(tmp_path)
    summary = cmd_eval(dirs[0], domain="nominal", episodes=3, seed=2, max_steps=0)
    assert summary["final_angle_deg_mean"] == 0.0
    assert summary["final_angle_deg_max"] == 0.0
    assert summary["return_mean"] == 0.0
    assert summary["steps_to_open_mean"] == 0.0


def test_eval_never_mutates_checkpoint(tmp_path):
    cfg, dirs = _train_tiny(tmp_path)
    files = sorted((dirs[0] / "checkpoint").iterdir())
    before = [(f.name, f.read_bytes()) for f in files]
    cmd_eval(dirs[0], domain="transfer", episodes=1, seed=4)
    after = [(f.name, f.read_bytes()) for f in sorted((dirs[0] / "checkpoint").iterdir())]
    assert after == before


def test_eval_dim_mismatch_is_explicit(tmp_path):
    cfg, dirs = _train_tiny(tmp_path)
    run = dirs[0]
    manifest = json.loads((run / "manifest.json").read_text())
    manifest["condition"] = "no_tactile"  # policy actually has tactile input
    (run / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ContractError, match="observation width 25"):
        cmd_eval(run, domain="nominal", episodes=1)


def test_eval_rejects_bad_arguments(tmp_path):
    cfg, dirs = _train_tiny(tmp_path)
    with pytest.raises(ConfigError, match="domain"):
        cmd_eval(dirs[0], domain="reality", episodes=1)
    with pytest.raises(ConfigError, match="episodes"):
        cmd_eval(dirs[0], domain="nominal", episodes=0)
    with pytest.raises(ConfigError, match="manifest"):
        cmd_eval(tmp_path / "nowhere", domain="nominal", episodes=1)


# --------------------------------------------------------------- calibration

def test_calibrate_default_grid(tmp_path):
    result = cmd_calibrate(None, out=tmp_path / "cal")
    report = json.loads((tmp_path / "cal" / "calibration.json").read_text())
    assert len(report["profiles"]) == 12
    assert len(report["kappa"]) == 15
    assert report["scale"] > 0.0
    for entry in report["profiles"]:
        assert entry["active_units"] >= 1
    with open(tmp_path / "cal" / "signals.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 12 * 15
    active = {(float(r["position_mm"]), float(r["weight_g"]))
              for r in rows if r["active"] == "1"}
    assert active  # every grid press lights something


def test_calibrate_profiles_file_roundtrip(tmp_path):
    profiles = [{"position_mm": p, "weight_g": w}
                for p in (128.0, 256.0, 350.0) for w in (50.0, 100.0, 200.0, 500.0)]
    path = tmp_path / "profiles.json"
    path.write_text(json.dumps(profiles))
    from_file = cmd_calibrate(path, out=tmp_path / "a")
    built_in = cmd_calibrate(None, out=tmp_path / "b")
    np.testing.assert_array_equal(from_file.kappa, built_in.kappa)


def test_calibrate_input_errors(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("[]")
    with pytest.raises(CalibrationError, match="no press profiles"):
        cmd_calibrate(empty, out=tmp_path / "cal")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"position_mm": 128.0}]))
    with pytest.raises(ConfigError, match="weight_g"):
        cmd_calibrate(bad, out=tmp_path / "cal")
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps([{"position_mm": 1, "weight_g": 1, "mass": 2}]))
    with pytest.raises(ConfigError, match="profiles\\[0\\]"):
        cmd_calibrate(unknown, out=tmp_path / "cal")


# ------------------------------------------------------------------- reports

def _fake_run(root: Path, condition: str, seed: int, angles, digest="d" * 64):
    """A run directory with just enough artifacts for cmd_report."""
    run = root / f"{condition}-seed{seed}"
    run.mkdir(parents=True)
    manifest = {"config_hash": digest, "condition": condition, "seed": seed,
                "obs_dim": 55, "act_dim": 8, "status": "complete",
                "env_steps": 60, "episodes": len(angles), "versions": {}}
    (run / "manifest.json").write_text(json.dumps(manifest))
    with open(run / "training_log.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(harness._LOG_COLUMNS)
        for i, angle in enumerate(angles):
            writer.writerow([i + 1, 0, (i + 1) * 30, 30, 1.0 + i, 0.3, angle, 0.0,
                             0.9, 0.45, 0.2, 0.5, 100.0, 6.0, 0.0, 0.0])
    with open(run / "eval_transfer.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(harness._EVAL_COLUMNS)
        for i, angle in enumerate(angles):
            writer.writerow([i, angle, angle, 30, 2.0 * angle, 30,
                             0.0, 0.0, 0.0, 0.0, 0.0])
    return run


def test_report_reproduces_published_improvement(tmp_path):
    # means 31.2 vs 21.5 must report the +45% headline figure
    tact = _fake_run(tmp_path, "tactile", 0, [31.2, 31.2, 31.2, 31.2])
    plain = _fake_run(tmp_path, "no_tactile", 0, [21.5, 21.5, 21.5, 21.5])
    report = cmd_report([tact, plain], out=tmp_path / "report")
    imp = report["improvement"]["transfer"]
    assert imp["improvement_pct"] == pytest.approx(45.116, abs=0.01)
    assert imp["interval_90_pct"] == pytest.approx([45.116, 45.116], abs=0.01)

    table = (tmp_path / "report" / "comparison_table.txt").read_text()
    for column in ("Door Angle", "Angle Min/Max", "Steps", "Reward"):
        assert column in table
    assert "reference:sim" in table and "reference:real" in table
    assert "41.8 +- 15.7" in table


def test_report_identical_conditions_zero_improvement(tmp_path):
    angles = [10.0, 20.0, 30.0]
    tact = _fake_run(tmp_path, "tactile", 0, angles)
    plain = _fake_run(tmp_path, "no_tactile", 0, angles)
    report = cmd_report([tact, plain], out=tmp_path / "report")
    assert report["improvement"]["transfer"]["improvement_pct"] == 0.0


def test_report_refuses_mixed_configs(tmp_path):
    a = _fake_run(tmp_path, "tactile", 0, [10.0], digest="a" * 64)
    b = _fake_run(tmp_path, "no_tactile", 0, [10.0], digest="b" * 64)
    with pytest.raises(ConfigError) as err:
        cmd_report([a, b], out=tmp_path / "report")
    assert "a" * 64 in str(err.value) and "b" * 64 in str(err.value)


def test_report_refuses_incomplete_runs(tmp_path):
    run = _fake_run(tmp_path, "tactile", 0, [10.0])
    manifest = json.loads((run / "manifest.json").read_text())
    manifest["status"] = "running"
    (run / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ConfigError, match="not complete"):
        cmd_report([run], out=tmp_path / "report")


def test_report_learning_curves_and_csv(tmp_path):
    tact0 = _fake_run(tmp_path, "tactile", 0, [10.0, 20.0])
    tact1 = _fake_run(tmp_path, "tactile", 1, [30.0, 40.0])
    plain = _fake_run(tmp_path, "no_tactile", 0, [5.0, 15.0])
    report = cmd_report([tact0, tact1, plain], out=tmp_path / "report")

    with open(tmp_path / "report" / "learning_curve_tactile.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    assert float(rows[0]["max_angle_deg_mean"]) == pytest.approx(20.0)  # (10+30)/2
    assert int(rows[0]["runs"]) == 2

    with open(tmp_path / "report" / "comparison.csv", newline="") as f:
        comparison = list(csv.DictReader(f))
    transfer_tactile = [r for r in comparison
                        if r["domain"] == "transfer" and r["condition"] == "tactile"]
    assert len(transfer_tactile) == 1
    assert float(transfer_tactile[0]["door_angle_mean"]) == pytest.approx(25.0)
    assert float(transfer_tactile[0]["episodes"]) == 4

    per_seed = {(r["condition"], r["seed"]): r["final_angle_deg_mean"]
                for r in report["per_run"]}
    assert per_seed[("tactile", 0)] == pytest.approx(15.0)
    assert per_seed[("tactile", 1)] == pytest.approx(35.0)


def test_bootstrap_improvement_properties():
    out = bootstrap_improvement([30.0] * 8, [20.0] * 8, n_resamples=200, seed=1)
    assert out["improvement_pct"] == pytest.approx(50.0)
    assert out["interval_90_pct"] == pytest.approx([50.0, 50.0])
    assert out["degenerate_resamples"] == 0

    rng = np.random.default_rng(0)
    t = rng.uniform(25, 45, 40)
    p = rng.uniform(15, 35, 40)
    out = bootstrap_improvement(t, p, n_resamples=2000, seed=2)
    lo, hi = out["interval_90_pct"]
    assert lo < out["improvement_pct"] < hi

    degenerate = bootstrap_improvement([10.0, 20.0], [0.0, 0.0], n_resamples=50, seed=3)
    assert degenerate["improvement_pct"] is None
    assert degenerate["degenerate_resamples"] == 50
    with pytest.raises(ConfigError):
        bootstrap_improvement([], [1.0])


def test_episode_stats_angle_bounds():
    stat = EpisodeStats(episode=0, final_alpha_deg=91.0, max_alpha_deg=91.0,
                        steps_to_open=1, episode_return=0.0, length=1,
                        term_sums=np.zeros(5))
    with pytest.raises(ContractError, match="outside"):
        stat.validate()


# ---------------------------------------------------------------------- CLI

def test_cli_full_pipeline(tmp_path, capsys):
    from touchdoor.cli import main

    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_tiny_dict()))
    out = tmp_path / "runs"
    assert main(["train", "--config", str(cfg_path), "--deterministic",
                 "--out", str(out)]) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert len(printed) == 2

    for run in printed:
        assert main(["eval", run, "--domain", "transfer", "--episodes", "1",
                     "--seed", "5"]) == 0
    assert "transfer" in capsys.readouterr().out

    assert main(["report", *printed, "--out", str(tmp_path / "report")]) == 0
    assert (tmp_path / "report" / "report.json").exists()


def test_cli_calibrate(tmp_path, capsys):
    from touchdoor.cli import main
    assert main(["calibrate", "--out", str(tmp_path / "cal")]) == 0
    assert "scale" in capsys.readouterr().out
    assert (tmp_path / "cal" / "calibration.json").exists()


def test_cli_errors_exit_2(tmp_path, capsys):
    from touchdoor.cli import main
    assert main(["train", "--config", str(tmp_path / "none.json")]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "nothing")]) == 2
    assert "error:" in capsys.readouterr().err
