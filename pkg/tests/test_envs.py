import math

import numpy as np
import pytest

from frlpoison import envs
from frlpoison.errors import ConfigError, InputError, ProtocolError


@pytest.mark.parametrize("env_id", envs.ENV_IDS)
def test_reset_is_deterministic_per_seed(env_id):
    a, b = envs.reset(env_id, 7), envs.reset(env_id, 7)
    assert a.observation.tobytes() == b.observation.tobytes()
    assert a.observation.shape == (envs.observation_dim(env_id),)


def test_cartpole_seeds_give_different_starts():
    assert not np.array_equal(envs.reset("cartpole", 7).observation,
                              envs.reset("cartpole", 8).observation)


def test_cartpole_initial_state_range():
    for seed in range(50):
        assert np.all(np.abs(envs.reset("cartpole", seed).observation) <= 0.05)


def test_gridworld_starts_at_origin():
    for seed in (0, 1, 99):
        s = envs.reset("gridworld", seed)
        assert s.physical == (0, 0)
        np.testing.assert_array_equal(s.observation, [0.0, 0.0])


def test_unknown_env_is_config_error():
    for fn in (lambda: envs.reset("hopper", 0), lambda: envs.max_episode_steps("hopper"),
               lambda: envs.action_spec("hopper")):
        with pytest.raises(ConfigError):
            fn()


def test_step_caps():
    assert envs.max_episode_steps("cartpole") == 300
    assert envs.max_episode_steps("pendulum") == 300
    assert envs.max_episode_steps("gridworld") == 100
    assert envs.max_episode_steps("analytic") == 1


def test_cartpole_upright_rest_reward():
    rest = envs.EnvState("cartpole", np.zeros(4), 0, False, (0.0, 0.0, 0.0, 0.0))
    for action in (0, 1):
        _, reward, done = envs.step(rest, action)
        assert reward == 1.0 and not done


def test_cartpole_euler_step_by_hand():
    # push right from rest: sin = 0, cos = 1
    temp = 10.0 / 1.1
    theta_acc = (0.0 - temp) / (0.5 * (4.0 / 3.0 - 0.1 / 1.1))
    x_acc = temp - 0.05 * theta_acc / 1.1
    rest = envs.EnvState("cartpole", np.zeros(4), 0, False, (0.0, 0.0, 0.0, 0.0))
    nxt, _, _ = envs.step(rest, 1)
    np.testing.assert_allclose(nxt.observation, [0.0, 0.02 * x_acc, 0.0, 0.02 * theta_acc],
                               rtol=1e-14, atol=1e-15)


def test_cartpole_termination_conditions():
    tilted = envs.EnvState("cartpole", np.zeros(4), 0, False, (0.0, 0.0, 0.215, 0.0))
    assert envs.step(tilted, 0)[2]  # 12 degrees is 0.2094 rad
    off = envs.EnvState("cartpole", np.zeros(4), 0, False, (2.45, 0.0, 0.0, 0.0))
    assert envs.step(off, 0)[2]
    near_cap = envs.EnvState("cartpole", np.zeros(4), 299, False, (0.0, 0.0, 0.0, 0.0))
    nxt, _, done = envs.step(near_cap, 0)
    assert done and nxt.terminated and nxt.step_index == 300


def test_gridworld_goal_reward():
    s = envs.EnvState("gridworld", np.array([1.0, 0.75]), 0, False, (4, 3))
    nxt, reward, done = envs.step(s, 2)  # down
    assert reward == 1.0 and done and nxt.physical == (4, 4)
    s = envs.EnvState("gridworld", np.array([0.0, 0.0]), 0, False, (0, 0))
    nxt, reward, done = envs.step(s, 0)  # bump into the top wall
    assert reward == -0.01 and not done and nxt.physical == (0, 0)


def test_step_on_terminated_state_is_protocol_error():
    s, _, done = envs.step(envs.reset("analytic", 0), 0)
    assert done
    with pytest.raises(ProtocolError):
        envs.step(s, 0)


@pytest.mark.parametrize("env_id,action", [("cartpole", 2), ("gridworld", -1),
                                           ("pendulum", [3.5]), ("cartpole", 0.5)])
def test_out_of_bounds_action_is_input_error(env_id, action):
    with pytest.raises(InputError):
        envs.step(envs.reset(env_id, 0), action)


def test_analytic_rewards():
    assert envs.step(envs.reset("analytic", 0), 0)[1:] == (1.0, True)
    assert envs.step(envs.reset("analytic", 0), 1)[1:] == (0.0, True)


@pytest.mark.parametrize("env_id", envs.ENV_IDS)
def test_rewards_within_declared_range(env_id):
    lo, hi = envs.reward_range(env_id)
    spec = envs.action_spec(env_id)
    rng = np.random.default_rng(0)
    for seed in range(5):
        s = envs.reset(env_id, seed)
        while not s.terminated:
            a = int(rng.integers(spec.n)) if spec.discrete else rng.uniform(spec.low, spec.high)
            s, r, _ = envs.step(s, a)
            assert lo <= r <= hi


def test_pendulum_reward_formula():
    s = envs.EnvState("pendulum", np.zeros(3), 0, False, (0.5, -1.0))
    _, r, _ = envs.step(s, [2.0])
    assert r == pytest.approx(-(0.25 + 0.1 + 0.004), abs=1e-15)
    assert envs.reset("pendulum", 3).observation[0] ** 2 + envs.reset("pendulum", 3).observation[1] ** 2 == pytest.approx(1.0)


@pytest.mark.parametrize("env_id", ["cartpole", "pendulum", "gridworld"])
def test_vector_env_matches_sequential_steps(env_id):
    spec = envs.action_spec(env_id)
    seeds = [11, 12, 13]
    batch = envs.VectorEnv(env_id, seeds)
    states = [envs.reset(env_id, s) for s in seeds]
    rng = np.random.default_rng(5)
    totals = np.zeros(3)
    seq_totals = np.zeros(3)
    while batch.active.any():
        if spec.discrete:
            acts = rng.integers(spec.n, size=3)
        else:
            acts = rng.uniform(spec.low[0], spec.high[0], size=(3, 1))
        np.testing.assert_allclose(
            batch.observations()[batch.active],
            np.array([s.observation for s in states])[batch.active], rtol=1e-12, atol=1e-12)
        totals += batch.step(acts)
        for i, s in enumerate(states):
            if not s.terminated:
                a = int(acts[i]) if spec.discrete else acts[i]
                states[i], r, _ = envs.step(s, a)
                seq_totals[i] += r
    np.testing.assert_allclose(totals, seq_totals, rtol=1e-12)
    assert all(s.terminated for s in states)


def test_action_spec_validation():
    with pytest.raises(ConfigError):
        envs.ActionSpec("discrete", n=1)
    with pytest.raises(ConfigError):
        envs.ActionSpec("continuous", low=(1.0,), high=(1.0,))
    spec = envs.action_spec("pendulum")
    assert spec.diameter == pytest.approx(6.0)
    assert math.isclose(float(spec.clip([5.0])[0]), 3.0)
