"""Sequential halving over independently seeded training runs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HalvingSchedule:
    """Stages of ``(survivors, epochs)``: ``survivors`` runs train ``epochs`` more."""

    stages: tuple = ((8, 800), (6, 800), (4, 3200))

    def __post_init__(self):
        stages = tuple((int(n), int(e)) for n, e in self.stages)
        if not stages:
            raise ValueError("schedule needs at least one stage")
        for n, e in stages:
            if n < 1 or e < 0:
                raise ValueError(f"invalid stage ({n}, {e})")
        counts = [n for n, _ in stages]
        if any(b >= a for a, b in zip(counts[:-1], counts[1:])):
            raise ValueError("survivor counts must be strictly decreasing")
        object.__setattr__(self, "stages", stages)

    @classmethod
    def parse(cls, text: str) -> "HalvingSchedule":
        """``"8x800,6x800,4x3200"`` style."""
        try:
            stages = [tuple(int(v) for v in part.lower().split("x")) for part in text.split(",") if part.strip()]
            if any(len(s) != 2 for s in stages):
                raise ValueError
        except ValueError:
            raise ValueError(f"cannot parse halving schedule '{text}'") from None
        return cls(tuple(stages))

    def __str__(self) -> str:
        return ",".join(f"{n}x{e}" for n, e in self.stages)

    @property
    def budget(self) -> int:
        return sum(n * e for n, e in self.stages)

    @property
    def full_run_epochs(self) -> int:
        """Epochs a run receives if it survives every stage."""
        return sum(e for _, e in self.stages)


@dataclass
class HalvingResult:
    best_policy: object
    best_score: float
    best_seed: int
    audit: list = field(default_factory=list)

    @property
    def total_epochs(self) -> int:
        return sum(a["epochs"] for a in self.audit)


def _as_score(sc) -> float:
    """Plain numbers pass through; performance reports give their mean."""
    if isinstance(sc, (int, float, np.floating, np.integer)):
        return float(sc)
    return float(sc.mean)


def sequential_halving(make_trainer, schedule: HalvingSchedule, seeds=None) -> HalvingResult:
    """Train the first stage from independent seeds and promote the top runs.

    ``make_trainer(seed, total_epochs)`` returns an object with
    ``train(epochs)``, ``score() -> float or report`` and ``policy()``.
    Ties in the ranking keep the earlier seed.
    """
    n0 = schedule.stages[0][0]
    seeds = list(range(n0)) if seeds is None else [int(s) for s in seeds]
    if len(seeds) != n0:
        raise ValueError(f"need {n0} seeds for the first stage, got {len(seeds)}")
    full = schedule.full_run_epochs
    runs = {s: make_trainer(s, full) for s in seeds}
    order = list(seeds)
    audit = []
    scores = {}
    done_epochs = {s: 0 for s in seeds}
    for stage, (n, epochs) in enumerate(schedule.stages):
        active = order[:n]
        for s in active:
            runs[s].train(epochs)
            done_epochs[s] += epochs
            sc = runs[s].score()
            scores[s] = _as_score(sc)
            audit.append({"stage": stage, "seed": s, "epochs": epochs, "cumulative_epochs": done_epochs[s],
                          "score": scores[s]})
            log.info("halving stage %d seed %d: score %.4f", stage, s, scores[s])
        # stable sort: earlier position wins ties
        order = sorted(active, key=lambda s: -scores[s])
        keep = schedule.stages[stage + 1][0] if stage + 1 < len(schedule.stages) else 1
        for s in order[keep:]:
            runs[s] = None  # eliminated runs release their trainer
    best = order[0]
    return HalvingResult(runs[best].policy(), scores[best], best, audit)
