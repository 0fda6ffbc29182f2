import logging

import numpy as np
import pytest

import proximity
from envs import (
    ADVERSARIAL_BATTLE,
    ADVERSARY_TEAM,
    ENV_KINDS,
    FOOD_COLLECTION,
    FREEZE_STEPS,
    GOOD_TEAM,
    GRASSLAND,
    ISING,
    EnvConfig,
    World,
    conformance_probe,
    make_env,
    rollout,
)
from neural_net import init_mlp


def _local(env, agents, i):
    return {j: agents[j] for j in proximity.one_hop_neighbors(agents, env.graph, i)}


def _policies(env, seed=0):
    rng = np.random.default_rng(seed)
    return [init_mlp([env.pad_spec.policy_length, 8, env.action_dim], env.policy_head, rng)
            for _ in range(env.num_agents)]


def test_ising_requires_square_team():
    with pytest.raises(ValueError):
        make_env(EnvConfig(ISING, 8))


def test_ising_reset_lays_out_torus():
    env = make_env(EnvConfig(ISING, 9))
    world = env.reset(0)
    assert world.agents.shape == (9, 3)
    np.testing.assert_array_equal(world.agents[4, :2], [1.0, 1.0])
    assert set(np.unique(world.agents[:, 2])) <= {-1.0, 1.0}
    assert proximity.one_hop_neighbors(world.agents, env.graph, 0) == (0, 1, 2, 3, 6)


def test_ising_aligned_team_earns_full_reward():
    env = make_env(EnvConfig(ISING, 9))
    agents = env.reset(1).agents
    up = np.array([0.0, 1.0])
    for i in range(9):
        local = _local(env, agents, i)
        assert env.reward(i, local, {j: up for j in local}, env.reset(1).furniture) == pytest.approx(1.0)


def test_ising_transition_follows_argmax():
    env = make_env(EnvConfig(ISING, 4))
    agents = env.reset(2).agents
    local = _local(env, agents, 0)
    flipped = env.transition_agent(0, local, np.array([0.9, 0.1]), np.random.default_rng(0))
    assert flipped[2] == -1.0
    np.testing.assert_array_equal(flipped[:2], agents[0, :2])


def test_particle_motion_is_bounded_and_clamped():
    env = make_env(EnvConfig(FOOD_COLLECTION, 3, d=0.15, epsilon=0.05))
    agents = np.array([[0.99, 0.0], [0.0, 0.0], [-0.5, -0.5]])
    local = _local(env, agents, 0)
    moved = env.transition_agent(0, local, np.array([1.0, 0.0]), np.random.default_rng(0))
    assert moved[0] == 1.0
    moved = env.transition_agent(1, _local(env, agents, 1), np.array([1.0, 1.0]), np.random.default_rng(0))
    assert np.linalg.norm(moved - agents[1]) == pytest.approx(0.05)


def test_particle_action_out_of_range_rejected():
    env = make_env(EnvConfig(FOOD_COLLECTION, 2))
    with pytest.raises(ValueError):
        env.validate_action(np.array([1.5, 0.0]))
    with pytest.raises(ValueError):
        env.validate_action(np.array([np.nan, 0.0]))


def test_reward_rejects_agents_outside_neighborhood():
    env = make_env(EnvConfig(FOOD_COLLECTION, 2, d=0.15, epsilon=0.05))
    states = {0: np.array([0.0, 0.0]), 1: np.array([0.5, 0.0])}
    actions = {0: np.zeros(2), 1: np.zeros(2)}
    with pytest.raises(ValueError):
        env.reward(0, states, actions, np.zeros((1, 2)))


def test_epsilon_larger_than_d_rejected():
    with pytest.raises(ValueError):
        make_env(EnvConfig(FOOD_COLLECTION, 3, d=0.1, epsilon=0.2))


def test_food_pellet_respawns_after_pickup():
    env = make_env(EnvConfig(FOOD_COLLECTION, 1))
    world = World(np.zeros((1, 2)), np.zeros((1, 2)))
    outcome = env.step(world, np.zeros((1, 2)), np.random.default_rng(4))
    assert outcome.rewards[0] == pytest.approx(5.0)
    assert not np.array_equal(outcome.world.furniture[0], [0.0, 0.0])


def test_grassland_tag_freezes_good_agent():
    env = make_env(EnvConfig(GRASSLAND, 2, d=0.2, epsilon=0.05))
    assert env.team_of(0) == GOOD_TEAM and env.team_of(1) == ADVERSARY_TEAM
    agents = np.array([[0.0, 0.0, GOOD_TEAM, 0.0], [0.05, 0.0, ADVERSARY_TEAM, 0.0]])
    furniture = np.array([[0.9, 0.9]])
    actions = {0: np.zeros(2), 1: np.zeros(2)}
    assert env.reward(1, _local(env, agents, 1), actions, furniture) == pytest.approx(5.0)
    frozen = env.transition_agent(0, _local(env, agents, 0), np.array([1.0, 0.0]), np.random.default_rng(0))
    assert frozen[3] == FREEZE_STEPS
    np.testing.assert_array_equal(frozen[:2], agents[0, :2])


def test_grassland_frozen_agent_counts_down():
    env = make_env(EnvConfig(GRASSLAND, 2, d=0.2, epsilon=0.05))
    agents = np.array([[0.0, 0.0, GOOD_TEAM, 3.0], [0.8, 0.8, ADVERSARY_TEAM, 0.0]])
    local = _local(env, agents, 0)
    assert env.reward(0, local, {0: np.zeros(2)}, np.zeros((0, 2))) == pytest.approx(-2.0)
    moved = env.transition_agent(0, local, np.array([1.0, 0.0]), np.random.default_rng(0))
    assert moved[3] == 2.0
    np.testing.assert_array_equal(moved[:2], [0.0, 0.0])


def test_battle_kill_penalty_and_respawn():
    env = make_env(EnvConfig(ADVERSARIAL_BATTLE, 4, d=0.2, epsilon=0.05))
    agents = np.array([
        [0.0, 0.0, GOOD_TEAM],
        [0.9, 0.9, GOOD_TEAM],
        [0.05, 0.0, ADVERSARY_TEAM],
        [-0.05, 0.0, ADVERSARY_TEAM],
    ])
    furniture = np.array([[-0.9, 0.9]])
    local = _local(env, agents, 0)
    assert env.reward(0, local, {j: np.zeros(2) for j in local}, furniture) == pytest.approx(-10.0)
    respawned = env.transition_agent(0, local, np.zeros(2), np.random.default_rng(5))
    assert np.linalg.norm(respawned[:2] - agents[0, :2]) <= 0.05 + 1e-12


@pytest.mark.parametrize("kind", ENV_KINDS)
def test_conformance_probe_finds_no_violations(kind):
    env = make_env(EnvConfig(kind, 9 if kind == ISING else 6))
    report = conformance_probe(env, 150, seed=3)
    assert report.violations == 0, report


@pytest.mark.parametrize("kind", ENV_KINDS)
def test_rollout_is_reproducible(kind):
    env = make_env(EnvConfig(kind, 4, episode_length=5))
    policies = _policies(env)
    first = rollout(env, policies, seed=9, episodes=2)
    assert first == rollout(env, policies, seed=9, episodes=2)
    assert len(first) == 2


def test_full_step_rewards_stay_bounded():
    env = make_env(EnvConfig(GRASSLAND, 6))
    rng = np.random.default_rng(8)
    world = env.reset(rng)
    for _ in range(30):
        actions = np.array([env.random_action(rng) for _ in range(env.num_agents)])
        outcome = env.step(world, actions, rng)
        assert np.all(np.abs(outcome.rewards) <= env.reward_bound)
        for i in range(env.num_agents):
            assert proximity.validate_motion(world.agents[i], outcome.world.agents[i], env.graph)
        world = outcome.world


def test_reward_above_bound_is_clipped_and_logged(caplog):
    env = make_env(EnvConfig(FOOD_COLLECTION, 1, reward_bound=1.0))
    caplog.set_level(logging.DEBUG, logger="envs")
    r = env.reward(0, {0: np.zeros(2)}, {0: np.zeros(2)}, np.zeros((1, 2)))
    assert r == 1.0
    assert "reward 5 clipped to the bound 1.0" in caplog.text


def test_reward_within_bound_is_not_logged(caplog):
    env = make_env(EnvConfig(FOOD_COLLECTION, 1))
    caplog.set_level(logging.DEBUG, logger="envs")
    assert env.reward(0, {0: np.zeros(2)}, {0: np.zeros(2)}, np.zeros((1, 2))) == pytest.approx(5.0)
    assert "clipped" not in caplog.text


def test_rollout_of_zero_reward_env_totals_zero(monkeypatch):
    env = make_env(EnvConfig(FOOD_COLLECTION, 4, episode_length=6))
    monkeypatch.setattr(env, "reward", lambda i, states, actions, furniture: 0.0)
    assert rollout(env, _policies(env), seed=1, episodes=3) == [0.0, 0.0, 0.0]


def test_rollout_sums_rewards_over_the_episode(monkeypatch):
    env = make_env(EnvConfig(FOOD_COLLECTION, 1, episode_length=25))
    monkeypatch.setattr(env, "reward", lambda i, states, actions, furniture: 1.0)
    assert rollout(env, _policies(env), seed=2, episodes=2) == [25.0, 25.0]


def test_rollout_needs_one_policy_per_agent():
    env = make_env(EnvConfig(FOOD_COLLECTION, 3))
    with pytest.raises(ValueError):
        rollout(env, _policies(env)[:2], seed=0, episodes=1)
