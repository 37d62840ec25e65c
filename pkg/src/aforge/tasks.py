"""Waypoint-distribution tasks, gate bookkeeping and episode scoring.

Gates are squares in planes normal to world +x.  A new gate is sampled
from the task's increment distribution each time the vehicle centre passes
the current gate plane, whether it went through the square (crossed) or
beside it (missed).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dynamics import RigidBodyState, Vehicle, hover_feasible, step
from .rotations import quat_from_euler_zyx
from .training.observation import observe_batch

log = logging.getLogger(__name__)

GATE_NONE, GATE_CROSSED, GATE_MISSED = 0, 1, -1


@dataclass(frozen=True)
class TaskSpec:
    """Waypoint increments: ``(step_forward, dy, dz)`` with ``(dy, dz) != 0``
    only with probability ``turn_probability``.

    ``dy`` is uniform on ``delta_y_range``, or on the union of that interval
    and its negation when ``delta_y_mirrored`` is set.
    """

    kind: str = "custom"
    step_forward: float = 0.5
    delta_y_range: tuple = (-0.25, 0.25)
    delta_y_mirrored: bool = False
    delta_z_range: tuple = (0.0, 0.0)
    turn_probability: float = 1.0
    gate_half_width: float = 0.25
    episode_duration: float = 5.0
    miss_penalty_weight: float = 10.0
    crash_distance: float = 10.0
    crash_tilt_deg: float = 120.0

    def __post_init__(self):
        if not 0.0 <= self.turn_probability <= 1.0:
            raise ValueError("turn probability must lie in [0, 1]")
        for name in ("delta_y_range", "delta_z_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} has min > max")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.step_forward <= 0 or self.gate_half_width <= 0 or self.episode_duration <= 0:
            raise ValueError("step, gate size and duration must be positive")

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["delta_y_range"] = list(self.delta_y_range)
        d["delta_z_range"] = list(self.delta_z_range)
        return d

    @classmethod
    def from_mapping(cls, d) -> "TaskSpec":
        d = dict(d)
        for k in ("delta_y_range", "delta_z_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def task_a() -> TaskSpec:
    return TaskSpec(kind="A", step_forward=0.5, delta_y_range=(-0.25, 0.25), delta_z_range=(0.0, 0.0),
                    turn_probability=1.0)


def task_b() -> TaskSpec:
    return TaskSpec(kind="B", step_forward=0.25, delta_y_range=(0.5, 0.7), delta_y_mirrored=True,
                    delta_z_range=(-0.1, 0.1), turn_probability=0.05)


def get_task(name) -> TaskSpec:
    if isinstance(name, TaskSpec):
        return name
    try:
        return {"A": task_a, "B": task_b}[str(name).upper()]()
    except KeyError:
        raise ValueError(f"unknown task '{name}', expected A or B") from None


def perturb_task(base: TaskSpec, pr: float = 1.0, dy: float = 1.0, dz: float = 1.0) -> TaskSpec:
    """Scale the turn probability and both ends of the dy / dz intervals."""
    for name, s in (("Pr", pr), ("dy", dy), ("dz", dz)):
        if not 1.0 <= s <= 1.25:
            warnings.warn(f"{name} scale {s} is outside the documented sweep [1.0, 1.25]", stacklevel=2)
    p = base.turn_probability * pr
    if p > 1.0:
        warnings.warn("scaled turn probability clipped to 1", stacklevel=2)
        p = 1.0
    yl, yh = base.delta_y_range
    zl, zh = base.delta_z_range
    return replace(base, turn_probability=p, delta_y_range=(yl * dy, yh * dy), delta_z_range=(zl * dz, zh * dz))


def episode_rng(seed: int, design_id: int, episode: int) -> np.random.Generator:
    """Counter-based stream for one episode, independent of evaluation order."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(design_id) & 0xFFFFFFFF, int(episode)])
    return np.random.Generator(np.random.Philox(ss))


def sample_increments(task: TaskSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` waypoint increments.  Four uniforms are consumed per draw."""
    u = rng.random((n, 4))
    turn = u[:, 0] < task.turn_probability
    ylo, yhi = task.delta_y_range
    dy = ylo + u[:, 1] * (yhi - ylo)
    if task.delta_y_mirrored:
        dy = np.where(u[:, 2] < 0.5, -dy, dy)
    zlo, zhi = task.delta_z_range
    dz = zlo + u[:, 3] * (zhi - zlo)
    out = np.zeros((n, 3))
    out[:, 0] = task.step_forward
    out[:, 1] = np.where(turn, dy, 0.0)
    out[:, 2] = np.where(turn, dz, 0.0)
    return out


def next_waypoint(task: TaskSpec, prev, rng: np.random.Generator) -> np.ndarray:
    return np.asarray(prev, dtype=float) + sample_increments(task, rng, 1)[0]


@dataclass(frozen=True)
class Gate:
    center: np.ndarray
    half_width: float = 0.25

    @property
    def normal(self) -> np.ndarray:
        return np.array([1.0, 0.0, 0.0])


def gate_events(p_prev, p_cur, centers, half_width: float) -> np.ndarray:
    """Batched gate classification: +1 crossed, -1 missed, 0 no plane passage.

    A passage is a forward transition of the signed plane distance from
    negative to non-negative; the crossing point is linearly interpolated.
    """
    p_prev = np.atleast_2d(p_prev)
    p_cur = np.atleast_2d(p_cur)
    centers = np.atleast_2d(centers)
    s0 = p_prev[:, 0] - centers[:, 0]
    s1 = p_cur[:, 0] - centers[:, 0]
    passed = (s0 < 0) & (s1 >= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = np.where(passed, -s0 / np.where(passed, s1 - s0, 1.0), 0.0)
    hit = p_prev + lam[:, None] * (p_cur - p_prev)
    inside = (np.abs(hit[:, 1] - centers[:, 1]) <= half_width) & (np.abs(hit[:, 2] - centers[:, 2]) <= half_width)
    return np.where(passed, np.where(inside, GATE_CROSSED, GATE_MISSED), GATE_NONE)


def gate_event(p_prev, p_cur, gate: Gate) -> str:
    code = int(gate_events(p_prev, p_cur, gate.center, gate.half_width)[0])
    return {GATE_NONE: "none", GATE_CROSSED: "crossed", GATE_MISSED: "missed"}[code]


@dataclass(frozen=True)
class InitialStateRanges:
    x: tuple = (-1.0, -0.5)
    y: tuple = (-0.5, 0.5)
    z: tuple = (-0.5, 0.5)
    roll_deg: float = 0.0
    pitch_deg: float = 0.0
    yaw_deg: tuple = (-30.0, 30.0)
    velocity: tuple = (-0.2, 0.2)
    angular_velocity_deg: tuple = (-11.46, 11.46)


def sample_initial_state(rng: np.random.Generator, ranges: InitialStateRanges, rotor_speeds) -> RigidBodyState:
    u = rng.random(10)
    lerp = lambda r, t: r[0] + t * (r[1] - r[0])  # noqa: E731
    pos = np.array([lerp(ranges.x, u[0]), lerp(ranges.y, u[1]), lerp(ranges.z, u[2])])
    yaw = np.deg2rad(lerp(ranges.yaw_deg, u[3]))
    q = quat_from_euler_zyx(yaw, np.deg2rad(ranges.pitch_deg), np.deg2rad(ranges.roll_deg))
    vel = np.array([lerp(ranges.velocity, t) for t in u[4:7]])
    omega = np.deg2rad([lerp(ranges.angular_velocity_deg, t) for t in u[7:10]])
    speeds = np.broadcast_to(np.asarray(rotor_speeds, dtype=float), (6,)).copy()
    return RigidBodyState(pos, q, vel, omega, speeds, np.zeros(6))


@dataclass
class EpisodeOutcome:
    crossed: int = 0
    missed: int = 0
    crashed: bool = False
    duration: float = 0.0
    event_log: list = field(default_factory=list)

    @property
    def score(self) -> float:
        return self.crossed - 10.0 * self.missed

    def scored(self, miss_weight: float) -> float:
        return self.crossed - miss_weight * self.missed


class GateTracker:
    """Per-slot current/previous gate, distance bookkeeping and event counts."""

    def __init__(self, task: TaskSpec, n: int):
        self.task = task
        self.n = n
        self.gate = np.zeros((n, 3))
        self.prev_gate = np.zeros((n, 3))
        self.d_best = np.zeros(n)
        self.rngs: list = [None] * n

    def reset_slot(self, i: int, rng: np.random.Generator, position) -> None:
        self.rngs[i] = rng
        # the first corridor starts at the initial position
        self.prev_gate[i] = position
        self.gate[i] = next_waypoint(self.task, np.zeros(3), rng)
        self.d_best[i] = np.linalg.norm(position - self.gate[i])

    def update(self, p_prev, p_cur):
        """Classify the step, spawn new gates on events; returns the codes."""
        codes = gate_events(p_prev, p_cur, self.gate, self.task.gate_half_width)
        for i in np.flatnonzero(codes):
            self.prev_gate[i] = self.gate[i]
            self.gate[i] = next_waypoint(self.task, self.gate[i], self.rngs[i])
            self.d_best[i] = np.linalg.norm(p_cur[i] - self.gate[i])
        return codes


@dataclass
class Transition:
    """What happened in one control step, for every slot in the batch."""

    pos_prev: np.ndarray
    pos: np.ndarray
    target: np.ndarray          # gate the vehicle was flying to at the start of the step
    target_prev: np.ndarray     # the gate before it (corridor start)
    d_best: np.ndarray          # best distance to ``target`` including this step
    crossed: np.ndarray
    missed: np.ndarray
    crash_dist: np.ndarray
    crash_orient: np.ndarray
    rotation: np.ndarray
    angular_velocity: np.ndarray
    timeout: np.ndarray
    done: np.ndarray
    final_obs: np.ndarray | None = None  # observation before any auto-reset


class WaypointEnv:
    """Batch of independent waypoint episodes for one vehicle.

    ``policy`` commands are rotor speeds in rev/s, applied at
    ``control_dt`` with the physics integrated at ``sim_dt``.  Each episode
    draws its initial state and gates from its own counter-based stream
    keyed by ``(seed, design_id, episode index)``.
    """

    def __init__(self, vehicle: Vehicle, task: TaskSpec, n_envs: int, seed: int = 0, design_id: int = 0,
                 control_dt: float = 0.02, sim_dt: float = 0.004, integrator: str = "euler",
                 ranges: InitialStateRanges | None = None, auto_reset: bool = True):
        self.vehicle = vehicle
        self.task = task
        self.n = n_envs
        self.seed = seed
        self.design_id = design_id
        self.control_dt = control_dt
        self.substeps = max(1, int(round(control_dt / sim_dt)))
        self.sim_dt = control_dt / self.substeps
        self.integrator = integrator
        self.ranges = ranges or InitialStateRanges()
        self.auto_reset = auto_reset
        self.max_steps = int(round(task.episode_duration / control_dt))
        hover = hover_feasible(vehicle.wrench, vehicle.mass, vehicle.rotor)
        rot = vehicle.rotor
        self.start_speeds = hover.hover_speeds if hover.feasible else np.full(6, 0.5 * (rot.rps_min + rot.rps_max))
        self.tracker = GateTracker(task, n_envs)
        self.state = RigidBodyState.at_rest(0.0, n_envs)
        self.t = np.zeros(n_envs, dtype=int)
        self.outcomes = [EpisodeOutcome() for _ in range(n_envs)]
        self.episode_ids = np.full(n_envs, -1)
        self.active = np.zeros(n_envs, dtype=bool)
        self.finished: list = []
        self._next_episode = 0
        self._cos_tilt = np.cos(np.deg2rad(task.crash_tilt_deg))

    def _reset_slot(self, i: int, episode: int | None = None) -> None:
        if episode is None:
            episode = self._next_episode
            self._next_episode += 1
        rng = episode_rng(self.seed, self.design_id, episode)
        s = sample_initial_state(rng, self.ranges, self.start_speeds)
        for name in ("position", "orientation", "linear_velocity", "angular_velocity", "rotor_speeds", "rotor_accel"):
            getattr(self.state, name)[i] = getattr(s, name)
        self.tracker.reset_slot(i, rng, s.position)
        self.t[i] = 0
        self.outcomes[i] = EpisodeOutcome()
        self.episode_ids[i] = episode
        self.active[i] = True

    def _park(self, mask) -> None:
        st = self.state
        st.position[mask] = np.where(np.isfinite(st.position[mask]), st.position[mask], 0.0)
        st.orientation[mask] = [1.0, 0.0, 0.0, 0.0]
        st.linear_velocity[mask] = 0.0
        st.angular_velocity[mask] = 0.0
        st.rotor_speeds[mask] = self.start_speeds
        st.rotor_accel[mask] = 0.0

    def reset(self, episodes=None) -> np.ndarray:
        for i in range(self.n):
            self._reset_slot(i, None if episodes is None else int(episodes[i]))
        return self.observe()

    def observe(self) -> np.ndarray:
        return observe_batch(self.state, self.tracker.gate)

    def step(self, commands):
        commands = np.asarray(commands, dtype=float)
        bad = ~np.all(np.isfinite(commands), axis=1)
        commands = np.where(bad[:, None], self.vehicle.rotor.rps_min, commands)
        idle = ~self.active
        if idle.any():
            # finished slots without auto-reset are parked at rest and report nothing
            self._park(idle)
            commands = np.where(idle[:, None], self.start_speeds, commands)
            bad &= ~idle
        target = self.tracker.gate.copy()
        target_prev = self.tracker.prev_gate.copy()
        pos_prev = self.state.position.copy()
        crossed = np.zeros(self.n, dtype=int)
        missed = np.zeros(self.n, dtype=int)
        d_best = self.tracker.d_best.copy()
        for _ in range(self.substeps):
            p0 = self.state.position.copy()
            self.state = step(self.state, commands, self.sim_dt, self.vehicle, self.integrator)
            codes = self.tracker.update(p0, self.state.position)
            crossed += (codes == GATE_CROSSED) & ~idle
            missed += (codes == GATE_MISSED) & ~idle
        self.t += 1
        changed = (crossed + missed) > 0
        d_here = np.linalg.norm(self.state.position - target, axis=1)
        d_best = np.where(changed, d_best, np.minimum(d_best, d_here))
        self.tracker.d_best = np.where(changed, self.tracker.d_best, d_best)

        rot = self.state.rotation()
        gap = np.max(np.abs(self.state.position - self.tracker.gate), axis=1)
        crash_dist = gap > self.task.crash_distance
        crash_orient = rot[:, 2, 2] < self._cos_tilt
        crash_dist |= bad | ~self.state.is_finite()
        timeout = self.t >= self.max_steps
        crash_dist &= ~idle
        crash_orient &= ~idle
        done = crash_dist | crash_orient | timeout | idle

        tr = Transition(pos_prev, self.state.position.copy(), target, target_prev, d_best, crossed, missed,
                        crash_dist.astype(float), crash_orient.astype(float), rot, self.state.angular_velocity.copy(),
                        timeout & ~(crash_dist | crash_orient), done, self.observe())
        for i in range(self.n):
            out = self.outcomes[i]
            tnow = self.t[i] * self.control_dt
            for _ in range(crossed[i]):
                out.event_log.append((tnow, out.crossed + out.missed, "crossed"))
                out.crossed += 1
            for _ in range(missed[i]):
                out.event_log.append((tnow, out.crossed + out.missed, "missed"))
                out.missed += 1
            if done[i] and not idle[i]:
                self.active[i] = False
                out.crashed = bool(crash_dist[i] or crash_orient[i])
                out.duration = tnow
                self.finished.append((int(self.episode_ids[i]), out))
                if self.auto_reset:
                    self._reset_slot(i)
        return self.observe(), tr


def run_episode(vehicle: Vehicle, policy, task: TaskSpec, seed: int = 0, episode: int = 0, design_id: int = 0,
                control_dt: float = 0.02, sim_dt: float = 0.004, integrator: str = "euler") -> EpisodeOutcome:
    """Fly one episode with a deterministic ``policy(obs) -> commands``."""
    env = WaypointEnv(vehicle, task, 1, seed=seed, design_id=design_id, control_dt=control_dt, sim_dt=sim_dt,
                      integrator=integrator, auto_reset=False)
    obs = env.reset([episode])
    for _ in range(env.max_steps):
        obs, tr = env.step(policy(obs))
        if tr.done[0]:
            break
    return env.finished[-1][1]


def run_episodes(vehicle: Vehicle, policy, task: TaskSpec, n_episodes: int, seed: int = 0, design_id: int = 0,
                 batch: int = 64, **env_kw) -> list[EpisodeOutcome]:
    """Episodes ``0 .. n-1`` in batches; results are ordered by episode index."""
    results = {}
    for start in range(0, n_episodes, batch):
        ids = list(range(start, min(start + batch, n_episodes)))
        env = WaypointEnv(vehicle, task, len(ids), seed=seed, design_id=design_id, auto_reset=False, **env_kw)
        obs = env.reset(ids)
        alive = np.ones(len(ids), dtype=bool)
        for _ in range(env.max_steps):
            obs, tr = env.step(policy(obs))
            alive &= ~tr.done
            if not alive.any():
                break
        for ep, out in env.finished:
            results.setdefault(ep, out)
    return [results[i] for i in range(n_episodes)]


@dataclass(frozen=True)
class PerformanceReport:
    mean: float
    stderr: float
    n_episodes: int
    crossed_rate: float
    missed_rate: float
    scores: tuple = ()

    def to_json_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_episodes": self.n_episodes,
                "crossed_rate": self.crossed_rate, "missed_rate": self.missed_rate}


def summarize(outcomes, miss_weight: float = 10.0) -> PerformanceReport:
    if not outcomes:
        raise ValueError("need at least one episode")
    scores = np.array([o.scored(miss_weight) for o in outcomes], dtype=float)
    n = len(scores)
    se = float(scores.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return PerformanceReport(float(scores.mean()), se, n, float(np.mean([o.crossed for o in outcomes])),
                             float(np.mean([o.missed for o in outcomes])), tuple(scores.tolist()))


def task_performance(vehicle: Vehicle, policy, task: TaskSpec, n_episodes: int = 64, seed: int = 0,
                     design_id: int = 0, batch: int = 64, **env_kw) -> PerformanceReport:
    """Mean of ``crossed - w * missed`` over ``n_episodes`` seeded episodes."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    outcomes = run_episodes(vehicle, policy, task, n_episodes, seed=seed, design_id=design_id, batch=batch, **env_kw)
    return summarize(outcomes, task.miss_penalty_weight)


def run_kinematic_path(path, task: TaskSpec, rng: np.random.Generator) -> EpisodeOutcome:
    """Gate bookkeeping along a prescribed trajectory, bypassing the dynamics."""
    path = np.asarray(path, dtype=float)
    tracker = GateTracker(task, 1)
    tracker.reset_slot(0, rng, path[0])
    out = EpisodeOutcome()
    for a, b in zip(path[:-1], path[1:]):
        code = int(tracker.update(a[None], b[None])[0])
        if code == GATE_CROSSED:
            out.crossed += 1
        elif code == GATE_MISSED:
            out.missed += 1
    return out
