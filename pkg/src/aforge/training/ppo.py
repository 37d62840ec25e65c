"""Clipped-surrogate PPO on batched waypoint environments."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..dynamics import Vehicle, hover_feasible
from ..tasks import TaskSpec, WaypointEnv, task_performance
from .observation import OBS_DIM
from .policy import DEFAULT_OBS_SCALE, HIDDEN, N_ACTIONS, PolicyNetwork
from .reward import RewardWeights, reward

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    n_envs: int = 64
    rollout_steps: int = 64
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    update_epochs: int = 4
    minibatches: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    init_log_std: float = -1.0
    reward_scale: float = 0.1
    smoothing_weight: float = 0.0
    curriculum_fraction: float = 0.8
    eval_episodes: int = 64
    eval_seed: int = 7919
    control_dt: float = 0.02
    sim_dt: float = 0.004
    torch_threads: int = 1

    def __post_init__(self):
        if self.n_envs < 1 or self.rollout_steps < 1 or self.minibatches < 1:
            raise ValueError("n_envs, rollout_steps and minibatches must be positive")
        if self.lr < 0 or not 0 < self.curriculum_fraction <= 1:
            raise ValueError("invalid learning rate or curriculum fraction")

    def to_mapping(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, d) -> "TrainerConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown trainer options: {sorted(bad)}")
        return cls(**d)


def curriculum(epoch: int, total_epochs: int, fraction: float = 0.8) -> float:
    """Linear ramp 0 -> 1 over the first ``fraction`` of ``total_epochs``."""
    if total_epochs <= 0:
        return 1.0
    ramp = max(fraction * total_epochs, 1.0)
    return float(min(max(epoch / ramp, 0.0), 1.0))


def _mlp(sizes, out_gain, gen):
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        lin = nn.Linear(a, b, dtype=torch.float64)
        last = i == len(sizes) - 2
        with torch.no_grad():
            w = torch.empty(b, a, dtype=torch.float64)
            nn.init.orthogonal_(w, gain=out_gain if last else np.sqrt(2.0), generator=gen)
            lin.weight.copy_(w)
            lin.bias.zero_()
        layers.append(lin)
        if not last:
            layers.append(nn.Tanh())
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    def __init__(self, gen: torch.Generator, init_log_std: float, out_bias):
        super().__init__()
        sizes = (OBS_DIM,) + HIDDEN
        self.register_buffer("obs_scale", torch.as_tensor(DEFAULT_OBS_SCALE, dtype=torch.float64))
        self.actor = _mlp(sizes + (N_ACTIONS,), 0.01, gen)
        self.critic = _mlp(sizes + (1,), 1.0, gen)
        with torch.no_grad():
            self.actor[-1].bias.copy_(torch.as_tensor(out_bias, dtype=torch.float64))
        self.log_std = nn.Parameter(torch.full((N_ACTIONS,), float(init_log_std), dtype=torch.float64))

    def forward(self, obs):
        x = obs * self.obs_scale
        return self.actor(x), self.critic(x).squeeze(-1)

    def to_policy(self, rps_min: float, rps_max: float) -> PolicyNetwork:
        lins = [m for m in self.actor if isinstance(m, nn.Linear)]
        return PolicyNetwork([m.weight.detach().numpy().copy() for m in lins],
                             [m.bias.detach().numpy().copy() for m in lins], rps_min, rps_max, "tanh",
                             self.obs_scale.numpy().copy())


def _log_prob(mean, log_std, u):
    z = (u - mean) / torch.exp(log_std)
    return (-0.5 * z * z - log_std - 0.5 * np.log(2 * np.pi)).sum(-1)


class PPOTrainer:
    """Incremental trainer: call :meth:`train` repeatedly, :meth:`score` between.

    ``total_epochs`` is the length of the full planned run and fixes the
    curriculum; the trainer may be stopped before reaching it.
    """

    def __init__(self, vehicle: Vehicle, task: TaskSpec, cfg: TrainerConfig | None = None, seed: int = 0,
                 total_epochs: int = 200, design_id: int = 0, weights: RewardWeights | None = None):
        self.vehicle = vehicle
        self.task = task
        self.cfg = cfg or TrainerConfig()
        self.seed = int(seed)
        self.total_epochs = int(total_epochs)
        self.design_id = design_id
        base = weights or RewardWeights()
        self.weights = RewardWeights(**{**asdict(base), "smoothing": self.cfg.smoothing_weight})
        torch.set_num_threads(self.cfg.torch_threads)
        ss = np.random.SeedSequence([self.seed, 0xA11CE])
        k_torch, k_np, k_env = ss.generate_state(3)
        self.gen = torch.Generator().manual_seed(int(k_torch))
        self.rng = np.random.default_rng(int(k_np))
        rot = vehicle.rotor
        self.rps_min, self.rps_max = rot.rps_min, rot.rps_max
        hov = hover_feasible(vehicle.wrench, vehicle.mass, rot)
        mid, half = 0.5 * (self.rps_max + self.rps_min), 0.5 * (self.rps_max - self.rps_min)
        target = hov.hover_speeds if hov.feasible else np.full(N_ACTIONS, mid)
        out_bias = np.arctanh(np.clip((target - mid) / half, -0.95, 0.95))
        self.net = ActorCritic(self.gen, self.cfg.init_log_std, out_bias)
        self.opt = torch.optim.Adam(self.net.parameters(), lr=self.cfg.lr, eps=1e-5)
        self.env = WaypointEnv(vehicle, task, self.cfg.n_envs, seed=int(k_env), design_id=design_id,
                               control_dt=self.cfg.control_dt, sim_dt=self.cfg.sim_dt, auto_reset=True)
        self.obs = self.env.reset()
        self.prev_a = np.zeros((self.cfg.n_envs, N_ACTIONS))
        self.first = np.ones(self.cfg.n_envs, dtype=bool)
        self.epoch = 0
        self.curve: list[float] = []
        self.episode_returns: list[float] = []
        self._ep_ret = np.zeros(self.cfg.n_envs)

    # -- helpers --------------------------------------------------------------
    def _act(self, obs):
        with torch.no_grad():
            o = torch.as_tensor(obs, dtype=torch.float64)
            mean, value = self.net(o)
            eps = torch.randn(mean.shape, generator=self.gen, dtype=torch.float64)
            u = mean + torch.exp(self.net.log_std) * eps
            logp = _log_prob(mean, self.net.log_std, u)
        return u.numpy(), logp.numpy(), value.numpy()

    def _value(self, obs):
        with torch.no_grad():
            return self.net(torch.as_tensor(obs, dtype=torch.float64))[1].numpy()

    def policy(self) -> PolicyNetwork:
        return self.net.to_policy(self.rps_min, self.rps_max)

    @property
    def progress(self) -> float:
        return curriculum(self.epoch, self.total_epochs, self.cfg.curriculum_fraction)

    # -- training ---------------------------------------------------------------
    def _rollout(self, c):
        cfg = self.cfg
        T, N = cfg.rollout_steps, cfg.n_envs
        buf = {k: np.zeros((T, N) + s) for k, s in
               (("obs", (OBS_DIM,)), ("u", (N_ACTIONS,)), ("logp", ()), ("val", ()), ("rew", ()), ("boot", ()), ("done", ()))}
        half = 0.5 * (self.rps_max - self.rps_min)
        mid = 0.5 * (self.rps_max + self.rps_min)
        for t in range(T):
            u, logp, val = self._act(self.obs)
            a = np.tanh(u)
            prev = np.where(self.first[:, None], a, self.prev_a)
            obs_next, tr = self.env.step(mid + half * a)
            r = reward(tr, c, self.weights, self.task.gate_half_width, actions=a, prev_actions=prev).total
            self._ep_ret += r
            # bootstrap through time limits
            if tr.timeout.any():
                buf["boot"][t] = cfg.gamma * np.where(tr.timeout, self._value(tr.final_obs), 0.0)
            buf["obs"][t], buf["u"][t], buf["logp"][t], buf["val"][t] = self.obs, u, logp, val
            buf["rew"][t], buf["done"][t] = r, tr.done
            self.prev_a = a
            self.first = tr.done.copy()
            for i in np.flatnonzero(tr.done):
                self.episode_returns.append(float(self._ep_ret[i]))
                self._ep_ret[i] = 0.0
            self.obs = obs_next
        last_val = self._value(self.obs)
        adv = np.zeros((T, N))
        gae = np.zeros(N)
        scaled = buf["rew"] * cfg.reward_scale + buf["boot"]
        vals = buf["val"]
        for t in reversed(range(T)):
            nxt = last_val if t == T - 1 else vals[t + 1]
            nonterm = 1.0 - buf["done"][t]
            delta = scaled[t] + cfg.gamma * nxt * nonterm - vals[t]
            gae = delta + cfg.gamma * cfg.gae_lambda * nonterm * gae
            adv[t] = gae
        buf["adv"] = adv
        buf["ret"] = adv + vals
        return buf

    def _update(self, buf):
        cfg = self.cfg
        n = cfg.rollout_steps * cfg.n_envs
        flat = {k: torch.as_tensor(v.reshape((n,) + v.shape[2:]), dtype=torch.float64) for k, v in buf.items()}
        mb = max(n // cfg.minibatches, 1)
        stats = []
        for _ in range(cfg.update_epochs):
            perm = self.rng.permutation(n)
            for start in range(0, n, mb):
                idx = torch.as_tensor(perm[start:start + mb])
                mean, value = self.net(flat["obs"][idx])
                logp = _log_prob(mean, self.net.log_std, flat["u"][idx])
                adv = flat["adv"][idx]
                adv = (adv - adv.mean()) / (adv.std() + 1e-8) if len(idx) > 1 else adv
                ratio = torch.exp(logp - flat["logp"][idx])
                pg = -torch.min(ratio * adv, torch.clamp(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv).mean()
                vloss = 0.5 * ((value - flat["ret"][idx]) ** 2).mean()
                ent = (self.net.log_std + 0.5 * np.log(2 * np.pi * np.e)).sum()
                loss = pg + cfg.value_coef * vloss - cfg.entropy_coef * ent
                if not torch.isfinite(loss):
                    raise TrainingDivergence(
                        f"non-finite loss at epoch {self.epoch} (policy {pg.item()}, value {vloss.item()})")
                self.opt.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(self.net.parameters(), cfg.max_grad_norm)
                self.opt.step()
                stats.append((pg.item(), vloss.item()))
        return stats

    def train(self, epochs: int) -> list[float]:
        """Run ``epochs`` rollout/update cycles; returns their mean step rewards."""
        out = []
        for _ in range(int(epochs)):
            c = self.progress
            buf = self._rollout(c)
            self._update(buf)
            self.epoch += 1
            m = float(buf["rew"].mean())
            self.curve.append(m)
            out.append(m)
            if self.epoch % 50 == 0:
                log.debug("epoch %d  c=%.3f  mean step reward %.4f", self.epoch, c, m)
        return out

    def score(self, n_episodes: int | None = None, seed: int | None = None):
        """Task performance of the deterministic policy."""
        n = n_episodes or self.cfg.eval_episodes
        s = self.cfg.eval_seed if seed is None else seed
        return task_performance(self.vehicle, self.policy(), self.task, n_episodes=n, seed=s,
                                design_id=self.design_id, control_dt=self.cfg.control_dt, sim_dt=self.cfg.sim_dt)

    def smoothness(self, n_episodes: int | None = None, seed: int | None = None) -> float:
        """Mean squared action delta of the deterministic policy."""
        n = n_episodes or self.cfg.eval_episodes
        s = self.cfg.eval_seed if seed is None else seed
        return action_smoothness(self.vehicle, self.policy(), self.task, n, s, self.design_id,
                                 control_dt=self.cfg.control_dt, sim_dt=self.cfg.sim_dt)


def action_smoothness(vehicle: Vehicle, policy: PolicyNetwork, task: TaskSpec, n_episodes: int = 64,
                      seed: int = 0, design_id: int = 0, **env_kw) -> float:
    """Mean per-step ``||a_t - a_{t-1}||^2`` of the normalised actions in [-1, 1]."""
    env = WaypointEnv(vehicle, task, n_episodes, seed=seed, design_id=design_id, auto_reset=False, **env_kw)
    obs = env.reset(list(range(n_episodes)))
    alive = np.ones(n_episodes, dtype=bool)
    prev = None
    total, count = 0.0, 0
    for _ in range(env.max_steps):
        a = policy.normalized(obs)
        if prev is not None:
            d = np.sum((a - prev) ** 2, axis=1)
            total += float(d[alive].sum())
            count += int(alive.sum())
        obs, tr = env.step(policy.to_rps(a))
        prev = a
        alive &= ~tr.done
        if not alive.any():
            break
    return total / max(count, 1)


@dataclass
class TrainResult:
    policy: PolicyNetwork
    curve: list
    trainer: PPOTrainer


def train(vehicle: Vehicle, task: TaskSpec, cfg: TrainerConfig | None = None, seed: int = 0,
          epochs: int = 200) -> TrainResult:
    """Train a fresh policy for ``epochs`` epochs."""
    tr = PPOTrainer(vehicle, task, cfg, seed=seed, total_epochs=epochs)
    tr.train(epochs)
    return TrainResult(tr.policy(), list(tr.curve), tr)
