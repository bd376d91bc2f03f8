import json
import subprocess
import sys

import pytest

from cvxq.cli import main

GRID_CONFIG = {
    "env": {"name": "gridworld", "params": {"n": 3}},
    "basis": {"kind": "tabular"},
    "sampling": {"bins": [3, 3], "n_bar": 1},
    "episodic": {"kappa": 0.5, "tol": 0.0, "alpha": 50.0, "regularizer": "HingeSquare"},
    "exploration": {"eps0": 0.2, "xi": 0.05, "eps_max": 0.8},
    "validation": {"max_decisions": 30, "max_raw_steps": 300},
    "n_episodes": 4,
    "max_segments_per_episode": 60,
    "max_raw_steps_per_episode": 600,
    "seed": 3,
}


def _write_config(tmp_path, **overrides):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(dict(GRID_CONFIG, **overrides)))
    return str(path)


def test_train_writes_run_and_prints_json(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["episodes"] == 4 and payload["runs"] == 1
    assert "theta" not in payload  # stays in theta.bin, not on the terminal
    assert payload["final_theta_norm"] > 0.0
    assert {p.name for p in out.iterdir()} == {"metrics.csv", "theta.bin", "theta.json", "manifest.json"}


def test_repeated_train_is_byte_identical(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", cfg, "--out", str(a)]) == 0
    assert main(["train", "--config", cfg, "--out", str(b)]) == 0
    capsys.readouterr()
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "theta.bin").read_bytes() == (b / "theta.bin").read_bytes()


def test_seed_flag_changes_the_run(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", cfg, "--out", str(a)]) == 0
    assert main(["train", "--config", cfg, "--out", str(b), "--seed", "8"]) == 0
    capsys.readouterr()
    assert (a / "theta.bin").read_bytes() != (b / "theta.bin").read_bytes()


def test_validate_reads_theta_from_disk(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    code = main(["validate", "--config", cfg, "--theta", str(out / "theta.bin"), "--runs", "2"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["episode_rewards"]) == 2
    assert "goal_hits" in payload


def test_dual_audit_reports_exact_occupancy(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    assert main(["dual-audit", "--config", cfg]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["kkt_passed"] is True
    assert payload["relative_gap"] <= 1e-7
    assert payload["occupancy"]["exact"]["exact_match"] is True


def test_diagnose_prints_verdict(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    assert main(["diagnose", "--config", cfg, "--episodes", "30"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["covariance"]["dim"] == 35
    assert "verdict" in payload["verdict"]


def test_lqr_compare_needs_no_config(capsys):
    assert main(["lqr-compare", "--iters", "50", "--seed", "1"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["max_relative_error"] < 0.02
    assert len(payload["watkins"]) == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad)]) == 1
    invalid = tmp_path / "invalid.json"
    invalid.write_text(json.dumps(dict(GRID_CONFIG, env={"name": "pendulum"})))
    assert main(["train", "--config", str(invalid)]) == 1
    err = capsys.readouterr().err
    assert err.count("error:") == 3


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # --config is required
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "cvxq.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "train" in proc.stdout and "dual-audit" in proc.stdout
