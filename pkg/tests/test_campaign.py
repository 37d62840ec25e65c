import json

import numpy as np
import pytest

from aforge.design_space import DIM
from aforge.optim.bo import EvaluationBudget
from aforge.optim.campaign import (
    CONVERGENCE, CONVERGENCE_HEADER, RECORDS, CampaignConfig, CampaignLogError, ConfigError, load_records,
    run_campaign)
from aforge.optim.objective import DesignScore, PrescreenConfig, evaluate_design, prescreen, proxy_score

SMALL = CampaignConfig(seed=3, budget=EvaluationBudget(bo_max=8, cmaes_max=6, patience=100, n_init=4))


def read(out, name):
    return (out / name).read_bytes()


def test_config_validation():
    with pytest.raises(ConfigError) as e:
        CampaignConfig.from_mapping({"budgett": {}})
    assert e.value.field == "budgett"
    with pytest.raises(ConfigError) as e:
        CampaignConfig.from_mapping({"budget": {"bo_max": 5, "extra": 1}})
    assert e.value.field == "budget.extra"
    for bad in ({"task": "C"}, {"jobs": 0}, {"objective": "magic"}, {"sigma0": -1.0}, {"halving": "2x5,3x5"}):
        with pytest.raises(ConfigError):
            CampaignConfig.from_mapping(bad)
    cfg = CampaignConfig.from_mapping({"budget": {"bo_max": 5}, "seed": 9})
    assert CampaignConfig.from_mapping(cfg.to_mapping()) == cfg
    assert cfg.digest() == CampaignConfig.from_mapping(cfg.to_mapping()).digest()


def test_prescreen_outcomes():
    ok = prescreen(np.full(DIM, 0.5))
    assert ok.passed and ok.vehicle is not None
    assert proxy_score(ok.vehicle) > 0


def test_failed_prescreen_scores_zero_without_training():
    calls = []

    def objective(vehicle, design_id, seed):
        calls.append(design_id)
        return DesignScore(1.0, 0.0, 100)

    # thrust axes tilted flat for every motor
    xi = np.tile([0.5, 0.5, 0.5, 1.0, 0.5], 3)
    pre = prescreen(xi)
    rec = evaluate_design(xi, objective, PrescreenConfig(), 0, 0)
    assert not pre.passed and pre.reason.startswith("hover")
    assert rec["score"] == 0.0 and rec["training_epochs"] == 0 and calls == []


def test_objective_errors_are_tagged():
    def broken(vehicle, design_id, seed):
        raise RuntimeError("diverged")

    rec = evaluate_design(np.full(DIM, 0.5), broken, PrescreenConfig(), 4, 0)
    assert rec["score"] == 0.0 and "diverged" in rec["error"]


def test_small_campaign(tmp_path):
    res = run_campaign(SMALL, tmp_path)
    assert res.status == "complete" and len(res.records) == 14
    phases = [r["phase"] for r in res.records]
    assert phases == ["sobol-init"] * 4 + ["bo"] * 4 + ["cmaes"] * 6
    assert [r["design_id"] for r in res.records] == list(range(14))
    assert all(0 <= v <= 1 for r in res.records for v in r["xi"])
    assert res.cmaes_start == res.bo_best["xi"]
    lines = read(tmp_path, CONVERGENCE).decode().splitlines()
    assert lines[0] == CONVERGENCE_HEADER and len(lines) == 15
    best = [float(line.split(",")[3]) for line in lines[1:]]
    assert all(b >= a for a, b in zip(best, best[1:]))
    assert best[-1] == res.best["score"]


def test_campaign_is_byte_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_campaign(SMALL, a)
    run_campaign(SMALL, b)
    assert read(a, RECORDS) == read(b, RECORDS)
    assert read(a, CONVERGENCE) == read(b, CONVERGENCE)


def test_resume_matches_uninterrupted_run(tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    run_campaign(SMALL, full)
    first = run_campaign(SMALL, part, max_new_evaluations=5)
    assert first.status == "interrupted" and len(first.records) == 5
    second = run_campaign(SMALL, part, max_new_evaluations=4)
    assert second.new_evaluations == 4
    last = run_campaign(SMALL, part)
    assert last.status == "complete" and last.new_evaluations == 5
    assert read(full, RECORDS) == read(part, RECORDS)
    # nothing left to do
    again = run_campaign(SMALL, part)
    assert again.new_evaluations == 0


def test_torn_tail_is_dropped(tmp_path):
    run_campaign(SMALL, tmp_path, max_new_evaluations=3)
    with open(tmp_path / RECORDS, "a") as fh:
        fh.write('{"design_id": 3, "phase": "so')
    assert len(load_records(tmp_path / RECORDS)) == 3
    res = run_campaign(SMALL, tmp_path)
    assert res.status == "complete" and res.new_evaluations == 11


def test_foreign_log_is_rejected(tmp_path):
    run_campaign(SMALL, tmp_path, max_new_evaluations=3)
    other = CampaignConfig.from_mapping({**SMALL.to_mapping(), "seed": 4})
    with pytest.raises(CampaignLogError):
        run_campaign(other, tmp_path)


def test_out_of_order_log_is_rejected(tmp_path):
    (tmp_path / RECORDS).write_text(json.dumps({"design_id": 1}) + "\n")
    with pytest.raises(CampaignLogError):
        load_records(tmp_path / RECORDS)


def test_parallel_jobs_give_identical_records(tmp_path):
    cfg = CampaignConfig.from_mapping({**SMALL.to_mapping(), "batch": 2, "jobs": 2})
    serial = CampaignConfig.from_mapping({**SMALL.to_mapping(), "batch": 2})
    run_campaign(cfg, tmp_path / "p")
    run_campaign(serial, tmp_path / "s")
    assert read(tmp_path / "p", RECORDS) == read(tmp_path / "s", RECORDS)


def test_injected_objective(tmp_path):
    def objective(vehicle, design_id, seed):
        return DesignScore(float(-design_id), 0.1)

    res = run_campaign(SMALL, tmp_path, objective=objective)
    passed = [r for r in res.records if r["prescreen"]["passed"]]
    assert all(r["score"] == -r["design_id"] and r["stderr"] == 0.1 for r in passed)
