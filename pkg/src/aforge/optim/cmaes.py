"""(mu/mu_w, lambda) CMA-ES with box handling on the unit cube."""
from __future__ import annotations

import logging

import numpy as np

from .bo import Evaluation, PhaseResult, evaluate

log = logging.getLogger(__name__)


def default_popsize(dim: int) -> int:
    return 4 + int(np.floor(3 * np.log(dim)))


class CMAES:
    """Ask/tell CMA-ES maximizing an objective on ``[0, 1]^n``.

    Samples outside the box are evaluated at their projection; the ranking
    uses the projected score minus ``penalty * ||x - clip(x)||^2`` so the
    distribution is pulled back inside.
    """

    def __init__(self, mean, sigma: float = 0.1, rng: np.random.Generator | None = None,
                 popsize: int | None = None, penalty: float = 1.0, cond_limit: float = 1e14):
        self.mean = np.array(mean, dtype=float)
        n = self.n = self.mean.size
        self.sigma0 = float(sigma)
        self.sigma = float(sigma)
        self.rng = rng or np.random.default_rng()
        self.lam = popsize or default_popsize(n)
        self.mu = self.lam // 2
        w = np.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights ** 2)
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, np.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self.penalty = penalty
        self.cond_limit = cond_limit
        self.generation = 0
        self.restarts = 0
        self._reset_covariance()
        self._pending = None

    def _reset_covariance(self):
        n = self.n
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)

    def ask(self) -> np.ndarray:
        """``lambda`` raw samples (possibly outside the box)."""
        z = self.rng.standard_normal((self.lam, self.n))
        y = (z * self.D) @ self.B.T
        x = self.mean + self.sigma * y
        self._pending = x
        return x

    @staticmethod
    def repair(x) -> np.ndarray:
        return np.clip(x, 0.0, 1.0)

    def tell(self, x, scores) -> None:
        x = np.asarray(x, dtype=float)
        fit = np.asarray(scores, dtype=float) - self.penalty * np.sum((x - self.repair(x)) ** 2, axis=1)
        order = np.argsort(-fit, kind="stable")
        n = self.n
        old = self.mean
        sel = x[order[: self.mu]]
        self.mean = self.weights @ sel
        y_w = (self.mean - old) / self.sigma
        c_inv_sqrt = self.B @ np.diag(1.0 / self.D) @ self.B.T
        self.ps = (1 - self.cs) * self.ps + np.sqrt(self.cs * (2 - self.cs) * self.mueff) * (c_inv_sqrt @ y_w)
        self.generation += 1
        hsig = (np.linalg.norm(self.ps) / np.sqrt(1 - (1 - self.cs) ** (2 * self.generation)) / self.chi_n
                < 1.4 + 2 / (n + 1))
        self.pc = (1 - self.cc) * self.pc + hsig * np.sqrt(self.cc * (2 - self.cc) * self.mueff) * y_w
        ys = (sel - old) / self.sigma
        rank_mu = (ys.T * self.weights) @ ys
        dh = (1 - hsig) * self.cc * (2 - self.cc)
        self.C = ((1 - self.c1 - self.cmu) * self.C + self.c1 * (np.outer(self.pc, self.pc) + dh * self.C)
                  + self.cmu * rank_mu)
        self.sigma *= np.exp((self.cs / self.damps) * (np.linalg.norm(self.ps) / self.chi_n - 1))
        self._decompose()

    def _decompose(self):
        self.C = 0.5 * (self.C + self.C.T)
        try:
            d2, B = np.linalg.eigh(self.C)
            ok = np.all(np.isfinite(d2)) and d2.min() > 0 and d2.max() / d2.min() < self.cond_limit
        except np.linalg.LinAlgError:
            ok = False
        if not ok or not np.isfinite(self.sigma) or self.sigma <= 1e-16:
            log.warning("CMA-ES covariance degenerate at generation %d; restarting at current mean", self.generation)
            self.restarts += 1
            self.sigma = self.sigma0
            self.mean = self.repair(self.mean)
            self._reset_covariance()
            return
        self.D = np.sqrt(d2)
        self.B = B


def cmaes_phase(objective, start, budget: int, rng: np.random.Generator, sigma: float = 0.1,
                popsize: int | None = None, patience: int | None = None, start_score: float = -np.inf) -> PhaseResult:
    """Refine around ``start``; returns the best-ever evaluated design.

    ``start_score`` is the known value of ``start``, if any; it is not
    re-evaluated.
    """
    start = np.asarray(start, dtype=float)
    res = PhaseResult(best=Evaluation(start, float(start_score), 0.0, "start"))
    if budget <= 0:
        res.stopped = "budget"
        return res
    es = CMAES(start, sigma, rng, popsize)
    stale = 0
    while len(res.history) < budget:
        raw = es.ask()
        scores = []
        for x in raw:
            if len(res.history) >= budget:
                break
            xc = es.repair(x)
            s, se = evaluate(objective, xc)
            scores.append(s)
            ev = Evaluation(xc, s, se, "cmaes")
            res.history.append(ev)
            if s > res.best.score:
                res.best, stale = ev, 0
            else:
                stale += 1
        if len(scores) < len(raw):
            break
        es.tell(raw, scores)
        if patience and stale >= patience:
            res.stopped = "patience"
            return res
    res.stopped = "budget"
    return res
