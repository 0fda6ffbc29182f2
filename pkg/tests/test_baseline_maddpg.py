import numpy as np
import pytest

from baseline_maddpg import collect_joint_transition, make_maddpg, run_baseline
from coordinator import run_training
from envs import FOOD_COLLECTION, GRASSLAND, ISING, make_env
from learner import init_policy_table, make_learner, run_iteration
from run_config import env_config


@pytest.mark.parametrize("kind", [ISING, FOOD_COLLECTION])
def test_single_agent_matches_darl1n_bit_for_bit(small_cfg, kind):
    darl1n = run_training(small_cfg(env=kind, M=1, max_iterations=3))
    maddpg = run_baseline(small_cfg(env=kind, M=1, max_iterations=3, algorithm="maddpg"))
    assert [r.avg_total_reward for r in darl1n.rows] == [r.avg_total_reward for r in maddpg.rows]
    for a, b in zip(darl1n.table, maddpg.table):
        for x, y in zip(a.policy.arrays() + a.target.arrays(), b.policy.arrays() + b.target.arrays()):
            np.testing.assert_array_equal(x, y)


def test_joint_transition_covers_whole_team(small_cfg):
    cfg = small_cfg(env=GRASSLAND, M=6, algorithm="maddpg")
    env = make_env(env_config(cfg))
    state = make_maddpg(env, cfg)
    record = collect_joint_transition(state, collect_seed=11, sample_index=0)
    assert record.states.shape == (6, env.obs_dim)
    assert record.actions.shape == (6, env.action_dim)
    assert record.rewards.shape == (6,)
    assert all(i in members for i, members in enumerate(record.neighbors))
    assert state.central_spec.critic_length == 6 * (env.obs_dim + env.action_dim)


def test_frozen_adversaries_are_not_trained(small_cfg):
    cfg = small_cfg(env=GRASSLAND, M=4, algorithm="maddpg", adversary_mode="frozen")
    env = make_env(env_config(cfg))
    initial = make_maddpg(env, cfg).table
    result = run_baseline(cfg)
    for i in (2, 3):
        for x, y in zip(result.table[i].policy.arrays(), initial[i].policy.arrays()):
            np.testing.assert_array_equal(x, y)
    changed = [not np.array_equal(x, y) for x, y in zip(result.table[0].policy.arrays(), initial[0].policy.arrays())]
    assert any(changed)


def test_baseline_is_reproducible(small_cfg):
    cfg = small_cfg(env=FOOD_COLLECTION, M=3, algorithm="maddpg")
    first, second = run_baseline(cfg), run_baseline(cfg)
    assert [r.avg_total_reward for r in first.rows] == [r.avg_total_reward for r in second.rows]


@pytest.mark.slow
def test_single_agent_equivalence_over_twenty_iterations(small_cfg):
    darl1n = run_training(small_cfg(env=FOOD_COLLECTION, M=1, max_iterations=20, hidden_units=64, hidden_layers=3))
    maddpg = run_baseline(small_cfg(env=FOOD_COLLECTION, M=1, max_iterations=20, hidden_units=64, hidden_layers=3,
                                    algorithm="maddpg"))
    for a, b in zip(darl1n.table, maddpg.table):
        for x, y in zip(a.policy.arrays(), b.policy.arrays()):
            np.testing.assert_array_equal(x, y)


def _darl1n_learner_update_s(cfg, iterations):
    env = make_env(env_config(cfg))
    learner = make_learner(env, cfg, 0)
    table = init_policy_table(env, cfg)
    return sum(run_iteration(learner, it, table).update_s for it in range(iterations)) / iterations


def _maddpg_update_s(cfg):
    rows = run_baseline(cfg).rows
    return sum(r.update_s for r in rows) / len(rows)


@pytest.mark.slow
def test_darl1n_update_time_grows_slower_than_maddpg(small_cfg):
    def cfg(M, algorithm):
        return small_cfg(env=ISING, M=M, algorithm=algorithm, hidden_units=32, batch_size=32,
                         max_transition_number=32, max_iterations=3)

    darl1n = _darl1n_learner_update_s(cfg(25, "darl1n"), 3) / _darl1n_learner_update_s(cfg(9, "darl1n"), 3)
    maddpg = _maddpg_update_s(cfg(25, "maddpg")) / _maddpg_update_s(cfg(9, "maddpg"))
    assert darl1n <= (25 / 9) * 1.5
    assert darl1n < maddpg
