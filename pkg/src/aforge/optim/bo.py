"""Gaussian-process Bayesian optimization over the unit box."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern

log = logging.getLogger(__name__)

JITTER = 1e-8


@dataclass(frozen=True)
class EvaluationBudget:
    bo_max: int = 750
    cmaes_max: int = 250
    patience: int = 100
    n_init: int = 32

    def __post_init__(self):
        if min(self.bo_max, self.cmaes_max, self.n_init) < 0 or self.patience < 1:
            raise ValueError("budgets must be >= 0 and patience >= 1")


@dataclass
class Evaluation:
    x: np.ndarray
    score: float
    stderr: float = 0.0
    phase: str = ""


@dataclass
class PhaseResult:
    history: list = field(default_factory=list)
    best: Evaluation | None = None
    stopped: str = ""


def evaluate(objective, x):
    """Objective values may be a float or a ``(score, stderr)`` pair."""
    out = objective(x)
    if isinstance(out, tuple):
        return float(out[0]), float(out[1])
    return float(getattr(out, "mean", out)), float(getattr(out, "stderr", 0.0))


class GPSurrogate:
    """Matern-5/2 ARD Gaussian process with per-point noise variances."""

    def __init__(self, dim: int, seed: int = 0, restarts: int = 2):
        self.dim = dim
        self.seed = seed
        self.restarts = restarts
        self.kernel = ConstantKernel(1.0, (1e-3, 1e3)) * Matern(np.full(dim, 0.5), (1e-2, 1e2), nu=2.5)
        self.gp = None
        self._y_mean = 0.0
        self._y_std = 1.0

    def fit(self, X, y, noise_std=None, optimize: bool = True) -> "GPSurrogate":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self._y_mean = float(y.mean())
        sd = float(y.std())
        self._y_std = sd if sd > 1e-12 else 1.0
        yn = (y - self._y_mean) / self._y_std
        noise = np.zeros(len(y)) if noise_std is None else np.asarray(noise_std, dtype=float)
        alpha = (noise / self._y_std) ** 2 + JITTER
        kernel = self.kernel
        gp = GaussianProcessRegressor(kernel, alpha=alpha, normalize_y=False,
                                      n_restarts_optimizer=self.restarts if optimize else 0,
                                      optimizer="fmin_l_bfgs_b" if optimize else None, random_state=self.seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            gp.fit(X, yn)
        self.gp = gp
        self.kernel = gp.kernel_
        return self

    def predict(self, X):
        """Posterior mean and latent standard deviation in objective units."""
        mu, sd = self.gp.predict(np.atleast_2d(X), return_std=True)
        return self._y_mean + self._y_std * mu, self._y_std * np.maximum(sd, 0.0)


def expected_improvement(mu, sd, incumbent: float) -> np.ndarray:
    """EI for maximization; zero where the latent std vanishes."""
    sd = np.asarray(sd, dtype=float)
    imp = np.asarray(mu, dtype=float) - incumbent
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, imp / np.where(sd > 0, sd, 1.0), 0.0)
    ei = imp * norm.cdf(z) + sd * norm.pdf(z)
    return np.where(sd > 0, np.maximum(ei, 0.0), np.maximum(imp, 0.0))


class BayesOpt:
    """Ask/tell BO with a scrambled Sobol initial design and noise-aware EI.

    The incumbent is the best posterior mean over evaluated points, and
    acquisition ties are broken by the larger predictive variance.  Batches
    larger than one use the constant-liar heuristic.
    """

    def __init__(self, dim: int, rng: np.random.Generator, n_init: int = 32, refit_every: int = 5,
                 n_candidates: int = 2048, restarts: int = 2):
        self.dim = dim
        self.rng = rng
        self.n_init = n_init
        self.refit_every = refit_every
        self.n_candidates = n_candidates
        self.X: list = []
        self.y: list = []
        self.se: list = []
        self._sobol = None
        if n_init > 0:
            m = int(np.ceil(np.log2(max(n_init, 1))))
            sob = qmc.Sobol(dim, scramble=True, seed=int(rng.integers(2**31)))
            self._sobol = list(sob.random_base2(m)[:n_init])
        self.surrogate = GPSurrogate(dim, seed=int(rng.integers(2**31)), restarts=restarts)
        self._fits = 0
        self.fallbacks = 0

    def tell(self, x, score: float, stderr: float = 0.0) -> None:
        self.X.append(np.asarray(x, dtype=float))
        self.y.append(float(score))
        self.se.append(float(stderr))

    def ask(self, k: int = 1) -> np.ndarray:
        out = []
        while len(out) < k and self._sobol:
            out.append(self._sobol.pop(0))
        if len(out) == k:
            return np.array(out)
        if len(self.X) + len(out) < 2:
            out.extend(self.rng.random((k - len(out), self.dim)))
            return np.array(out)
        X = list(self.X)
        y = list(self.y)
        se = list(self.se)
        for x in out:  # pending Sobol points enter as liars
            X.append(x)
            y.append(min(self.y) if self.y else 0.0)
            se.append(0.0)
        for j in range(k - len(out)):
            try:
                optimize = j == 0 and (self._fits % self.refit_every == 0)
                self.surrogate.fit(np.array(X), np.array(y), np.array(se), optimize=optimize)
                if j == 0:
                    self._fits += 1
                x = self._maximize_acquisition(np.array(X))
            except (np.linalg.LinAlgError, ValueError) as exc:
                log.warning("surrogate fit failed (%s), using a quasi-random proposal", exc)
                self.fallbacks += 1
                x = self.rng.random(self.dim)
            out.append(x)
            X.append(x)
            y.append(min(self.y))
            se.append(0.0)
        return np.array(out)

    def _maximize_acquisition(self, X) -> np.ndarray:
        mu_obs, _ = self.surrogate.predict(X)
        incumbent = float(mu_obs.max())
        best = X[int(np.argmax(mu_obs))]
        n = self.n_candidates
        cand = np.vstack([
            self.rng.random((n // 2, self.dim)),
            np.clip(best + 0.05 * self.rng.standard_normal((n // 4, self.dim)), 0, 1),
            np.clip(best + 0.15 * self.rng.standard_normal((n - n // 2 - n // 4, self.dim)), 0, 1),
        ])
        mu, sd = self.surrogate.predict(cand)
        ei = expected_improvement(mu, sd, incumbent)
        order = np.lexsort((-sd, -ei))  # EI first, ties by larger variance
        top = cand[order[:3]]

        h = 1e-6
        steps = h * np.eye(self.dim)

        def neg_and_grad(x):
            # forward differences from a single batched prediction
            pts = np.vstack([x, x + steps])
            m, s = self.surrogate.predict(pts)
            e = -expected_improvement(m, s, incumbent)
            return float(e[0]), (e[1:] - e[0]) / h

        best_x, best_v = cand[order[0]], -ei[order[0]]
        if ei[order[0]] > 0:
            for x0 in top:
                res = minimize(neg_and_grad, x0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * self.dim,
                               options={"maxiter": 30})
                if res.fun < best_v:
                    best_x, best_v = res.x, res.fun
        return np.clip(best_x, 0.0, 1.0)


def bo_phase(objective, budget: int, rng: np.random.Generator, n_init: int = 32, patience: int | None = None,
             batch: int = 1, dim: int = 15, **kw) -> PhaseResult:
    """Run BO for at most ``budget`` evaluations (fewer on ``patience``)."""
    res = PhaseResult()
    if budget <= 0:
        res.stopped = "budget"
        return res
    opt = BayesOpt(dim, rng, n_init=min(n_init, budget), **kw)
    stale = 0
    while len(res.history) < budget:
        xs = opt.ask(min(batch, budget - len(res.history)))
        for x in xs:
            s, se = evaluate(objective, x)
            ev = Evaluation(np.asarray(x), s, se, "bo")
            res.history.append(ev)
            opt.tell(x, s, se)
            if res.best is None or s > res.best.score:
                res.best, stale = ev, 0
            else:
                stale += 1
        if patience and stale >= patience:
            res.stopped = "patience"
            return res
    res.stopped = "budget"
    return res
