"""Design evaluation: hover prescreen and the scoring objectives."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..design_space import BodyGeometry, BoundTable, DesignError, MassProperties, MotorLayout, decode, mass_inertia
from ..dynamics import RotorModel, Vehicle, accel_envelope, hover_feasible
from ..geometry_repair import RepairConfig, RepairResult, repair
from ..tasks import TaskSpec, task_performance

log = logging.getLogger(__name__)

# axes plus cube diagonals
PROXY_DIRECTIONS = np.vstack([np.vstack([np.eye(3), -np.eye(3)]),
                              np.array([[a, b, c] for a in (1, -1) for b in (1, -1) for c in (1, -1)]) / np.sqrt(3)])


@dataclass
class PrescreenResult:
    passed: bool
    reason: str
    layout: MotorLayout | None = None
    repair: RepairResult | None = None
    vehicle: Vehicle | None = None

    def to_json_dict(self) -> dict:
        return {"passed": self.passed, "reason": self.reason}


@dataclass(frozen=True)
class PrescreenConfig:
    bounds: BoundTable | None = None
    geometry: BodyGeometry = field(default_factory=BodyGeometry)
    rotor: RotorModel = field(default_factory=RotorModel)
    repair: RepairConfig = field(default_factory=RepairConfig)


def prescreen(xi, cfg: PrescreenConfig | None = None, repair_seed: int | None = None) -> PrescreenResult:
    """Decode, repair collisions and check hover feasibility."""
    cfg = cfg or PrescreenConfig()
    try:
        layout = decode(xi, cfg.bounds, cfg.geometry.propeller_radius)
    except DesignError as exc:
        return PrescreenResult(False, f"decode: {exc}")
    rcfg = cfg.repair if repair_seed is None else replace(cfg.repair, seed=int(repair_seed))
    rep = repair(layout, cfg.geometry, rcfg)
    if not rep.converged:
        return PrescreenResult(False, f"repair: {rep.message}", rep.repaired_layout, rep)
    fixed = rep.repaired_layout
    try:
        veh = Vehicle.build(fixed, cfg.geometry, cfg.rotor)
    except DesignError as exc:
        return PrescreenResult(False, f"mass: {exc}", fixed, rep)
    hov = hover_feasible(veh.wrench, veh.mass, cfg.rotor)
    if not hov.feasible:
        return PrescreenResult(False, f"hover: residual {hov.residual:.3g}", fixed, rep, veh)
    return PrescreenResult(True, "ok", fixed, rep, veh)


def proxy_score(vehicle: Vehicle, directions=PROXY_DIRECTIONS) -> float:
    """Mean torque-free acceleration capability over a fixed direction set."""
    env = accel_envelope(vehicle.wrench, vehicle.mass_props, directions, vehicle.rotor)
    return float(np.mean(env))


@dataclass
class DesignScore:
    score: float
    stderr: float = 0.0
    training_epochs: int = 0
    details: dict = field(default_factory=dict)


class ProxyEnvelopeObjective:
    """Stand-in for training: actuation envelope of the repaired design."""

    name = "proxy-envelope"

    def __call__(self, vehicle: Vehicle, design_id: int, seed: int) -> DesignScore:
        return DesignScore(proxy_score(vehicle))


class TrainingObjective:
    """Sequential-halving PPO training followed by task-performance scoring."""

    name = "train"

    def __init__(self, task: TaskSpec, trainer_cfg=None, schedule=None, eval_episodes: int = 256):
        from ..training.halving import HalvingSchedule
        from ..training.ppo import TrainerConfig

        self.task = task
        self.trainer_cfg = trainer_cfg or TrainerConfig()
        self.schedule = schedule or HalvingSchedule()
        self.eval_episodes = eval_episodes

    def __call__(self, vehicle: Vehicle, design_id: int, seed: int) -> DesignScore:
        from ..training.halving import sequential_halving
        from ..training.ppo import PPOTrainer

        def make(s, total):
            return PPOTrainer(vehicle, self.task, self.trainer_cfg, seed=s, total_epochs=total, design_id=design_id)

        n0 = self.schedule.stages[0][0]
        seeds = [int(v) for v in np.random.SeedSequence([seed, design_id]).generate_state(n0) % (2**31)]
        res = sequential_halving(make, self.schedule, seeds)
        perf = task_performance(vehicle, res.best_policy, self.task, n_episodes=self.eval_episodes,
                                seed=seed, design_id=design_id)
        return DesignScore(perf.mean, perf.stderr, res.total_epochs,
                           {"best_seed": res.best_seed, "crossed_rate": perf.crossed_rate,
                            "missed_rate": perf.missed_rate})


def evaluate_design(xi, objective, cfg: PrescreenConfig | None, design_id: int, seed: int) -> dict:
    """Prescreen then score one design; failures score exactly 0."""
    rseed = int(np.random.SeedSequence([seed, design_id, 1]).generate_state(1)[0])
    pre = prescreen(xi, cfg, repair_seed=rseed)
    rec = {"prescreen": pre.to_json_dict(), "layout": None, "score": 0.0, "stderr": 0.0,
           "training_epochs": 0, "error": None, "repair_cost": None}
    if pre.layout is not None:
        rec["layout"] = pre.layout.to_json_dict()
    if pre.repair is not None:
        rec["repair_cost"] = float(pre.repair.total_cost)
    if not pre.passed:
        return rec
    try:
        out = objective(pre.vehicle, design_id, seed)
    except Exception as exc:  # keep the campaign alive
        log.exception("design %d evaluation failed", design_id)
        rec["error"] = f"{type(exc).__name__}: {exc}"
        return rec
    rec.update(score=float(out.score), stderr=float(out.stderr), training_epochs=int(out.training_epochs))
    if out.details:
        rec["details"] = out.details
    return rec
