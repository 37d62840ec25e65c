import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from aforge.cli import EXIT_CONFIG, EXIT_EVAL, EXIT_OK, main
from aforge.design_space import Motor, layout_from_motors
from aforge.dynamics import ENVELOPE_HEADER
from aforge.rotations import rot_y

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
XI = ",".join(["0.5"] * 15)


def run(*argv):
    return main([str(a) for a in argv])


def load(path):
    return json.loads(Path(path).read_text())


@pytest.fixture
def planar_json(tmp_path):
    assert run("baseline", "--name", "planar", "--out", tmp_path / "p") == EXIT_OK
    return tmp_path / "p" / "layout.json"


def test_decode_writes_layout_render_and_manifest(tmp_path):
    assert run("decode", "--xi", XI, "--out", tmp_path) == EXIT_OK
    layout = load(tmp_path / "layout.json")
    assert len(layout["motors"]) == 6
    lines = (tmp_path / "render.csv").read_text().splitlines()
    assert lines[0] == "motor,x,y,z,ax,ay,az,spin" and len(lines) == 7
    man = load(tmp_path / "manifest.json")
    assert man["command"] == "decode" and man["seed"] == 0 and len(man["config_hash"]) == 16


def test_decode_rejects_bad_vectors(tmp_path, capsys):
    assert run("decode", "--xi", "0.5,0.5") == EXIT_CONFIG
    assert run("decode", "--xi", XI.replace("0.5", "1.5", 1)) == EXIT_CONFIG
    assert run("decode", "--xi", "a" + XI) == EXIT_CONFIG
    assert run("decode") == EXIT_CONFIG
    assert "15" in capsys.readouterr().err


def test_decode_stdout_pipes_into_repair(tmp_path):
    # baseline layouts are collision free, so the repair is the identity
    out = subprocess.run([sys.executable, "-m", "aforge.cli", "decode", "--baseline", "planar"],
                         capture_output=True, text=True, check=True).stdout
    res = subprocess.run([sys.executable, "-m", "aforge.cli", "repair"], input=out,
                         capture_output=True, text=True)
    assert res.returncode == EXIT_OK
    rep = json.loads(res.stdout)
    assert rep["converged"] and rep["total_cost"] == 0.0


def test_repair_reads_file(tmp_path, planar_json):
    assert run("repair", "--layout", planar_json, "--out", tmp_path / "r") == EXIT_OK
    assert load(tmp_path / "r" / "repair.json")["converged"]
    assert run("repair", "--layout", tmp_path / "missing.json") == EXIT_CONFIG


def test_check_hover(tmp_path, planar_json):
    assert run("check-hover", "--layout", planar_json, "--out", tmp_path) == EXIT_OK
    hv = load(tmp_path / "hover.json")
    assert hv["feasible"] and len(hv["hover_speeds"]) == 6


def test_envelope_csv(tmp_path, planar_json):
    assert run("envelope", "--layout", planar_json, "--plane", "xz", "--n", 8, "--out", tmp_path) == EXIT_OK
    lines = (tmp_path / "envelope.csv").read_text().splitlines()
    assert lines[0] == ",".join(ENVELOPE_HEADER) == "dir_x,dir_y,dir_z,max_accel_mps2"
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    assert rows.shape == (8, 4) and np.allclose(rows[:, 1], 0)
    assert run("envelope", "--layout", planar_json, "--out", tmp_path / "all", "--n", 6) == EXIT_OK
    assert len((tmp_path / "all" / "envelope.csv").read_text().splitlines()) == 19


def test_envelope_warns_for_non_hovering_layout(tmp_path):
    sideways = rot_y(np.pi / 2)
    first = [Motor(0.2 * np.array([np.cos(a), np.sin(a), 0.0]), sideways, s) for a, s in ((0.5, 1), (1.5, -1), (2.6, 1))]
    path = tmp_path / "flat.json"
    path.write_text(json.dumps(layout_from_motors(first).to_json_dict()))
    with pytest.warns(UserWarning):
        assert run("envelope", "--layout", path, "--out", tmp_path / "e") == EXIT_OK
    assert "warning" in (tmp_path / "e" / "envelope.csv").read_text()


def test_seed_precedence(tmp_path, monkeypatch, planar_json):
    monkeypatch.setenv("AFORGE_SEED", "11")
    assert run("repair", "--layout", planar_json, "--out", tmp_path / "a") == EXIT_OK
    assert load(tmp_path / "a" / "manifest.json")["seed"] == 11
    assert run("repair", "--layout", planar_json, "--seed", 4, "--out", tmp_path / "b") == EXIT_OK
    assert load(tmp_path / "b" / "manifest.json")["seed"] == 4
    monkeypatch.setenv("AFORGE_SEED", "eleven")
    assert run("repair", "--layout", planar_json) == EXIT_CONFIG


def test_optimize_dry_run_writes_only_manifest(tmp_path):
    out = tmp_path / "c"
    assert run("optimize", "--config", CONFIGS / "campaign.toml", "--dry-run", "--out", out) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json"]
    man = load(out / "manifest.json")
    assert man["config"]["budget"]["bo_max"] == 50 and man["config"]["objective"] == "proxy-envelope"


def test_optimize_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[budget]\nbo_maxx = 3\n")
    assert run("optimize", "--config", bad, "--out", tmp_path / "o") == EXIT_CONFIG
    assert run("optimize", "--config", CONFIGS / "campaign.toml") == EXIT_CONFIG
    assert run("optimize", "--config", tmp_path / "nope.toml", "--out", tmp_path / "o") == EXIT_CONFIG
    assert run("resume", "--out", tmp_path / "empty") == EXIT_CONFIG


def test_optimize_and_resume(tmp_path, capsys):
    out = tmp_path / "c"
    args = ("--config", CONFIGS / "campaign.toml", "--budget", 6, "--cmaes-budget", 3, "--out", out)
    assert run("optimize", *args) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["status"] == "complete" and summary["evaluations"] == 9
    lines = (out / "convergence.csv").read_text().splitlines()
    assert len(lines) == 10
    assert run("resume", "--out", out) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["new_evaluations"] == 0


def test_train_then_eval(tmp_path):
    cfg = tmp_path / "train.toml"
    cfg.write_text("task = \"A\"\n[trainer]\nn_envs = 4\nrollout_steps = 8\neval_episodes = 4\n")
    design = tmp_path / "d"
    assert run("baseline", "--name", "planar", "--out", design) == EXIT_OK
    out = tmp_path / "t"
    assert run("train", "--design", design / "layout.json", "--config", cfg, "--halving", "2x1,1x1",
               "--out", out) == EXIT_OK
    audit = load(out / "audit.json")
    assert audit["total_epochs"] == 3 and len(audit["runs"]) == 3
    assert run("eval", "--design", design / "layout.json", "--policy", out / "policy.json", "--episodes", 3,
               "--episodes-csv", "episodes.csv", "--out", tmp_path / "e") == EXIT_OK
    rep = load(tmp_path / "e" / "eval.json")
    assert rep["n_episodes"] == 3
    assert len((tmp_path / "e" / "episodes.csv").read_text().splitlines()) == 4
    assert run("eval", "--design", design / "layout.json", "--policy", out / "policy.json",
               "--episodes", 0) == EXIT_CONFIG


def test_train_rejects_bad_schedule(tmp_path, planar_json):
    assert run("train", "--design", planar_json, "--halving", "2y3", "--out", tmp_path) == EXIT_CONFIG


def test_baseline_match(tmp_path, planar_json):
    assert run("baseline", "--name", "franchi", "--match", planar_json, "--out", tmp_path) == EXIT_OK
    man = load(tmp_path / "manifest.json")
    assert man["config"]["arm"] > 0


def test_perturb_task(tmp_path, capsys):
    assert run("perturb-task", "--task", "B", "--pr", 1.2, "--dz", 1.25, "--out", tmp_path) == EXIT_OK
    task = load(tmp_path / "task.json")
    assert task["turn_probability"] == pytest.approx(0.06)
    assert run("perturb-task", "--pr", 0.5) == EXIT_OK
    assert "warning" in capsys.readouterr().err


def test_design_with_bad_motors_is_an_evaluation_error(tmp_path, planar_json):
    layout = load(planar_json)
    layout["motors"][0]["position"] = [0.0, 0.0, 0.0]
    layout["motors"][1]["position"] = [0.0, 0.0, 0.0]
    path = tmp_path / "overlap.json"
    path.write_text(json.dumps(layout))
    code = run("check-hover", "--layout", path)
    assert code in (EXIT_OK, EXIT_EVAL)
