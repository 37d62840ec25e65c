import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aforge.tasks import (
    GATE_CROSSED, GATE_MISSED, GATE_NONE, Gate, InitialStateRanges, TaskSpec, WaypointEnv, episode_rng, gate_event,
    gate_events, get_task, perturb_task, run_episode, run_episodes, run_kinematic_path, sample_increments,
    sample_initial_state, summarize, task_a, task_b, task_performance)
from aforge.training.reward import reward

from oracles import dense_gate_walk


def test_task_definitions():
    a, b = task_a(), task_b()
    assert a.turn_probability == 1.0 and a.step_forward == 0.5
    assert b.turn_probability == 0.05 and b.delta_y_mirrored
    assert get_task("b") == b
    with pytest.raises(ValueError):
        get_task("C")
    assert TaskSpec.from_mapping(b.to_mapping()) == b


def test_invalid_task_spec():
    with pytest.raises(ValueError):
        TaskSpec(turn_probability=1.5)
    with pytest.raises(ValueError):
        TaskSpec(delta_y_range=(1.0, 0.0))


def test_gate_event_examples():
    g = Gate(np.array([1.0, 0.0, 0.0]))
    assert gate_event([0.9, 0.1, 0.0], [1.1, 0.1, 0.0], g) == "crossed"
    assert gate_event([0.9, 0.4, 0.0], [1.1, 0.4, 0.0], g) == "missed"
    assert gate_event([0.5, 0.0, 0.0], [0.9, 0.0, 0.0], g) == "none"
    # backwards passage is not an event
    assert gate_event([1.1, 0.0, 0.0], [0.9, 0.0, 0.0], g) == "none"
    # segment that starts inside the square but crosses the plane outside it
    assert gate_event([0.9, 0.0, 0.0], [1.1, 0.8, 0.0], g) == "missed"


def test_gate_events_match_dense_walk(rng):
    n = 3000
    centers = rng.uniform(-1, 1, size=(n, 3))
    p0 = centers + rng.uniform(-0.6, 0.3, size=(n, 3))
    p1 = p0 + rng.uniform(-0.3, 0.9, size=(n, 3))
    codes = gate_events(p0, p1, centers, 0.25)
    for k in range(n):
        assert codes[k] == dense_gate_walk(p0[k], p1[k], centers[k], 0.25)
    assert set(np.unique(codes)) == {GATE_NONE, GATE_CROSSED, GATE_MISSED}


def test_increment_distributions(rng):
    inc = sample_increments(task_a(), rng, 20000)
    assert np.all(inc[:, 0] == 0.5) and np.all(np.abs(inc[:, 1]) <= 0.25) and np.all(inc[:, 2] == 0)
    inc = sample_increments(task_b(), rng, 200000)
    turned = inc[:, 1] != 0
    assert abs(turned.mean() - 0.05) < 0.003
    assert np.all(np.abs(inc[turned, 1]) >= 0.5) and np.all(np.abs(inc[turned, 1]) <= 0.7)
    assert abs(np.mean(inc[turned, 1] > 0) - 0.5) < 0.03
    assert np.all(np.abs(inc[:, 2]) <= 0.1) and np.all(inc[~turned, 2] == 0)


def test_episode_streams_are_counter_based():
    a = episode_rng(3, 7, 11).random(5)
    b = episode_rng(3, 7, 11).random(5)
    c = episode_rng(3, 7, 12).random(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_initial_state_inside_ranges(rng):
    r = InitialStateRanges()
    for _ in range(50):
        s = sample_initial_state(rng, r, 200.0)
        assert r.x[0] <= s.position[0] <= r.x[1]
        assert np.all(np.abs(s.linear_velocity) <= 0.2)
        assert np.all(np.abs(s.angular_velocity) <= np.deg2rad(11.46) + 1e-12)
        assert abs(np.linalg.norm(s.orientation) - 1) < 1e-12
        # pure yaw: body z stays vertical
        assert s.rotation()[2, 2] == pytest.approx(1.0)


def test_perturb_task():
    t = perturb_task(task_b(), pr=1.2, dy=1.1, dz=1.25)
    assert t.turn_probability == pytest.approx(0.06)
    assert t.delta_y_range == pytest.approx((0.55, 0.77))
    assert t.delta_z_range == pytest.approx((-0.125, 0.125))
    with pytest.warns(UserWarning):
        perturb_task(task_b(), pr=0.5)
    with pytest.warns(UserWarning):
        assert perturb_task(task_a(), pr=1.2).turn_probability == 1.0


def test_kinematic_straight_line_crosses_every_gate():
    task = task_a()
    # fly exactly through consecutive gate centres
    rng = episode_rng(0, 0, 0)
    gates = np.cumsum(sample_increments(task, episode_rng(0, 0, 0), 20), axis=0)
    path = np.vstack([[-0.5, 0.0, 0.0], gates + [0.01, 0, 0]])
    out = run_kinematic_path(path, task, rng)
    assert out.crossed == 20 and out.missed == 0 and out.score == 20


def test_kinematic_path_that_ignores_gates_misses():
    task = task_b()
    path = np.column_stack([np.linspace(-0.5, 10, 2000), np.full(2000, 3.0), np.zeros(2000)])
    out = run_kinematic_path(path, task, episode_rng(0, 0, 0))
    assert out.crossed == 0 and out.missed > 30
    assert out.scored(10) == -10 * out.missed


def hover_policy(env):
    return lambda obs: np.tile(env.start_speeds, (len(obs), 1))


def test_env_reset_is_reproducible(planar_vehicle):
    a = WaypointEnv(planar_vehicle, task_a(), 4, seed=5)
    b = WaypointEnv(planar_vehicle, task_a(), 4, seed=5)
    assert np.array_equal(a.reset(), b.reset())
    assert np.array_equal(a.tracker.gate, b.tracker.gate)


def test_first_gate_and_corridor(planar_vehicle):
    env = WaypointEnv(planar_vehicle, task_a(), 3, seed=1)
    env.reset()
    assert np.allclose(env.tracker.gate[:, 0], 0.5)
    assert np.array_equal(env.tracker.prev_gate, env.state.position)


def test_non_finite_commands_crash(planar_vehicle):
    env = WaypointEnv(planar_vehicle, task_a(), 2, seed=0, auto_reset=False)
    env.reset()
    cmd = np.full((2, 6), 250.0)
    cmd[1, 0] = np.nan
    _, tr = env.step(cmd)
    assert tr.done.tolist() == [False, True] and tr.crash_dist[1] == 1.0


def test_timeout_and_episode_order(planar_vehicle):
    outs = run_episodes(planar_vehicle, lambda o: np.full((len(o), 6), 247.0), task_a(), 5, seed=2, batch=2)
    assert len(outs) == 5
    one = run_episode(planar_vehicle, lambda o: np.full((len(o), 6), 247.0), task_a(), seed=2, episode=3)
    assert (one.crossed, one.missed, one.duration) == (outs[3].crossed, outs[3].missed, outs[3].duration)


def test_task_performance_is_deterministic(planar_vehicle):
    pol = lambda o: np.full((len(o), 6), 260.0)  # noqa: E731
    a = task_performance(planar_vehicle, pol, task_b(), n_episodes=8, seed=4)
    b = task_performance(planar_vehicle, pol, task_b(), n_episodes=8, seed=4)
    assert a == b
    assert a.mean == pytest.approx(np.mean(a.scores))
    with pytest.raises(ValueError):
        task_performance(planar_vehicle, pol, task_b(), n_episodes=0)


def test_summarize_stats():
    from aforge.tasks import EpisodeOutcome

    rep = summarize([EpisodeOutcome(3, 0), EpisodeOutcome(1, 1)])
    assert rep.mean == pytest.approx((3 + (1 - 10)) / 2)
    assert rep.stderr == pytest.approx(np.std([3, -9], ddof=1) / np.sqrt(2))


def test_instantaneous_reward_sums_to_metric(planar_vehicle, rng):
    env = WaypointEnv(planar_vehicle, task_b(), 16, seed=9, auto_reset=False)
    env.reset()
    itp = np.zeros(16)
    alive = np.ones(16, dtype=bool)
    for _ in range(env.max_steps):
        cmd = env.start_speeds + rng.normal(scale=15.0, size=(16, 6))
        _, tr = env.step(cmd)
        itp += np.where(alive, reward(tr, 0.5).instantaneous_task_performance, 0.0)
        alive &= ~tr.done
        if not alive.any():
            break
    outs = dict(env.finished)
    for i in range(16):
        o = outs[i]
        assert itp[i] == 10 * (o.crossed - 10 * o.missed)


@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_gate_events_symmetric_in_y(y, z):
    c = np.zeros((1, 3))
    a = gate_events([[-0.1, y, z]], [[0.1, y, z]], c, 0.25)
    b = gate_events([[-0.1, -y, z]], [[0.1, -y, z]], c, 0.25)
    assert a[0] == b[0]
