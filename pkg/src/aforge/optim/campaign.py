"""Design campaign: BO then CMA-ES over prescreened designs, with a replayable log.

Every evaluated design is appended to ``records.ndjson`` as soon as it is
scored.  Proposals depend only on the campaign seed and on the scores in
the log, so a campaign resumes by replaying the log through the proposers
and evaluating only designs that have no record yet.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..design_space import DIM, BoundTable
from ..tasks import get_task
from .bo import BayesOpt, EvaluationBudget
from .cmaes import CMAES
from .objective import PrescreenConfig, ProxyEnvelopeObjective, TrainingObjective, evaluate_design

log = logging.getLogger(__name__)

RECORDS = "records.ndjson"
TIMINGS = "timings.ndjson"
CONVERGENCE = "convergence.csv"
CONVERGENCE_HEADER = "eval_index,phase,score,best_so_far"
OBJECTIVES = ("proxy-envelope", "train")


class ConfigError(ValueError):
    """Invalid campaign configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class CampaignLogError(RuntimeError):
    pass


@dataclass(frozen=True)
class CampaignConfig:
    task: str = "A"
    seed: int = 0
    objective: str = "proxy-envelope"
    budget: EvaluationBudget = field(default_factory=EvaluationBudget)
    batch: int = 1
    jobs: int = 1
    sigma0: float = 0.1
    popsize: int | None = None
    gp_refit_every: int = 5
    bounds: BoundTable | None = None
    trainer: dict = field(default_factory=dict)
    halving: str = "8x800,6x800,4x3200"
    eval_episodes: int = 256

    def __post_init__(self):
        if str(self.task).upper() not in ("A", "B"):
            raise ConfigError("task", f"expected A or B, got {self.task!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError("objective", f"expected one of {OBJECTIVES}, got {self.objective!r}")
        for name in ("batch", "jobs", "gp_refit_every", "eval_episodes"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if not self.sigma0 > 0:
            raise ConfigError("sigma0", "must be positive")
        if self.popsize is not None and self.popsize < 2:
            raise ConfigError("popsize", "must be >= 2")
        try:
            from ..training.halving import HalvingSchedule
            from ..training.ppo import TrainerConfig

            HalvingSchedule.parse(self.halving)
            TrainerConfig.from_mapping(self.trainer)
        except ValueError as exc:
            raise ConfigError("trainer/halving", str(exc)) from None

    def to_mapping(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["budget"] = asdict(self.budget)
        d["bounds"] = None if self.bounds is None else self.bounds.to_mapping()
        d["trainer"] = dict(self.trainer)
        return d

    @classmethod
    def from_mapping(cls, d) -> "CampaignConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown field")
        if "budget" in d:
            b = dict(d["budget"])
            bad = set(b) - {f.name for f in fields(EvaluationBudget)}
            if bad:
                raise ConfigError(f"budget.{sorted(bad)[0]}", "unknown field")
            try:
                d["budget"] = EvaluationBudget(**{k: int(v) for k, v in b.items()})
            except (TypeError, ValueError) as exc:
                raise ConfigError("budget", str(exc)) from None
        if d.get("bounds") is not None:
            try:
                d["bounds"] = BoundTable.from_mapping(d["bounds"])
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigError("bounds", str(exc)) from None
        if "seed" in d and not isinstance(d["seed"], int):
            raise ConfigError("seed", "must be an integer")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_mapping(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def make_objective(self):
        if self.objective == "proxy-envelope":
            return ProxyEnvelopeObjective()
        from ..training.halving import HalvingSchedule
        from ..training.ppo import TrainerConfig

        return TrainingObjective(get_task(self.task), TrainerConfig.from_mapping(self.trainer),
                                 HalvingSchedule.parse(self.halving), self.eval_episodes)


@dataclass
class CampaignResult:
    records: list
    best: dict | None
    bo_best: dict | None
    status: str
    new_evaluations: int = 0
    cmaes_start: list | None = None


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, allow_nan=False, separators=(",", ":"))


def load_records(path) -> list[dict]:
    """Parse the record log; a torn trailing line from a kill is dropped."""
    path = Path(path)
    if not path.exists():
        return []
    lines = path.read_text().split("\n")
    out = []
    for k, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            if k >= len(lines) - 2:
                log.warning("dropping torn final record in %s", path)
                break
            raise CampaignLogError(f"corrupt record on line {k + 1} of {path}") from None
        if rec.get("design_id") != len(out):
            raise CampaignLogError(f"record on line {k + 1} has design_id {rec.get('design_id')}, expected {len(out)}")
        out.append(rec)
    return out


def _rewrite(path: Path, records) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")
    os.replace(tmp, path)


def write_convergence(path, records) -> None:
    best = -np.inf
    rows = [CONVERGENCE_HEADER]
    for i, rec in enumerate(records):
        best = max(best, rec["score"])
        rows.append(f"{i},{rec['phase']},{rec['score']:.17g},{best:.17g}")
    Path(path).write_text("\n".join(rows) + "\n")


def _same_x(logged, x) -> bool:
    return len(logged) == len(x) and all(float(a) == float(b) for a, b in zip(logged, x))


def _eval_job(args):
    xi, objective, pcfg, design_id, seed = args
    t0 = time.perf_counter()
    rec = evaluate_design(np.asarray(xi), objective, pcfg, design_id, seed)
    return rec, time.perf_counter() - t0


class _Runner:
    def __init__(self, cfg: CampaignConfig, out: Path, objective, pcfg, max_new: int | None):
        self.cfg = cfg
        self.out = out
        self.objective = objective
        self.pcfg = pcfg
        self.max_new = max_new
        self.logged = load_records(out / RECORDS)
        if self.logged:
            _rewrite(out / RECORDS, self.logged)  # drop any torn tail
        self.records: list = []
        self.new = 0
        self.pool = ProcessPoolExecutor(cfg.jobs) if cfg.jobs > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    @property
    def interrupted(self) -> bool:
        return self.max_new is not None and self.new >= self.max_new

    def evaluate(self, xs, phase: str) -> list:
        """Records for ``xs``, replayed from the log where available."""
        out, todo = [], []
        for x in xs:
            did = len(self.records) + len(out)
            x = [float(v) for v in np.asarray(x, dtype=float)]
            if did < len(self.logged):
                rec = self.logged[did]
                if rec["phase"] != phase or not _same_x(rec["xi"], x):
                    raise CampaignLogError(f"record {did} does not match the replayed proposal; "
                                           "the log belongs to a different configuration")
                out.append(rec)
            else:
                if self.interrupted:
                    break
                todo.append((did, x))
                out.append(None)
                self.new += 1
        if todo:
            jobs = [(x, self.objective, self.pcfg, did, self.cfg.seed) for did, x in todo]
            results = list(self.pool.map(_eval_job, jobs)) if self.pool else [_eval_job(j) for j in jobs]
            with open(self.out / RECORDS, "a") as fh, open(self.out / TIMINGS, "a") as th:
                for (did, x), (rec, wall) in zip(todo, results):
                    full = {"design_id": did, "phase": phase, "xi": x,
                            "seeds": {"campaign": self.cfg.seed, "design": did}, **rec}
                    out[out.index(None)] = full
                    fh.write(dumps_record(full) + "\n")
                    th.write(json.dumps({"design_id": did, "wall_time": wall}) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        done = [r for r in out if r is not None]
        self.records.extend(done)
        return done


def _phase_rng(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), key])))


def run_campaign(cfg: CampaignConfig, out_dir, objective=None, prescreen_cfg: PrescreenConfig | None = None,
                 max_new_evaluations: int | None = None) -> CampaignResult:
    """Run or resume a campaign writing into ``out_dir``.

    ``objective(vehicle, design_id, seed) -> DesignScore`` overrides the
    configured objective.  ``max_new_evaluations`` stops the run early, as
    if it had been killed, which is handy for testing resumption.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    objective = objective or cfg.make_objective()
    pcfg = prescreen_cfg or PrescreenConfig(bounds=cfg.bounds)
    run = _Runner(cfg, out, objective, pcfg, max_new_evaluations)
    budget = cfg.budget
    start = None
    try:
        # global phase
        bo = BayesOpt(DIM, _phase_rng(cfg.seed, 1), n_init=min(budget.n_init, budget.bo_max),
                      refit_every=cfg.gp_refit_every)
        best, stale, status = None, 0, "complete"
        n_bo = 0
        while n_bo < budget.bo_max and stale < budget.patience:
            k = min(cfg.batch, budget.bo_max - n_bo)
            xs = bo.ask(k)
            phase = "sobol-init" if n_bo < bo.n_init else "bo"
            recs = run.evaluate(xs, phase)
            for rec in recs:
                bo.tell(rec["xi"], rec["score"], rec["stderr"])
                n_bo += 1
                if best is None or rec["score"] > best["score"]:
                    best, stale = rec, 0
                else:
                    stale += 1
            if len(recs) < k:
                status = "interrupted"
                break
        bo_best = best
        # local phase, started at the global best
        if status != "interrupted":
            start = np.asarray(bo_best["xi"]) if bo_best else np.full(DIM, 0.5)
            es = CMAES(start, cfg.sigma0, _phase_rng(cfg.seed, 2), cfg.popsize)
            n_cma, stale = 0, 0
            while n_cma < budget.cmaes_max and stale < budget.patience:
                raw = es.ask()
                k = min(len(raw), budget.cmaes_max - n_cma)
                recs = run.evaluate(es.repair(raw[:k]), "cmaes")
                for rec in recs:
                    n_cma += 1
                    if best is None or rec["score"] > best["score"]:
                        best, stale = rec, 0
                    else:
                        stale += 1
                if len(recs) < k:
                    status = "interrupted"
                    break
                if k == len(raw):
                    es.tell(raw, [r["score"] for r in recs])
    finally:
        run.close()
    write_convergence(out / CONVERGENCE, run.records)
    return CampaignResult(run.records, best, bo_best, status, run.new,
                          None if start is None else [float(v) for v in start])
