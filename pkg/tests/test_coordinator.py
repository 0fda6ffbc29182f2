import threading
import time

import numpy as np
import pytest

import coordinator
from coordinator import (
    Controller,
    CoordinatorError,
    initial_table,
    load_policy_table,
    run_training,
    save_policy_table,
    serve_learner,
)
from envs import GRASSLAND, ISING, make_env
from learner import init_policy_table
from run_config import env_config
from wire_protocol import (
    Heartbeat,
    LearnerFailure,
    ParamMsg,
    Shutdown,
    UpdateMsg,
    decode_message,
    encode_message,
    queue_pair,
)


def _assert_tables_equal(a, b):
    for left, right in zip(a, b):
        for x, y in zip(left.policy.arrays() + left.target.arrays(), right.policy.arrays() + right.target.arrays()):
            np.testing.assert_array_equal(x, y)


def _fake_controller(cfg, env):
    ends = {i: queue_pair() for i in range(env.num_agents)}
    controller = Controller(cfg, env, {i: c for i, (c, _) in ends.items()}, init_policy_table(env, cfg))
    return controller, {i: learner for i, (_, learner) in ends.items()}


def _update(table, agent_id, iteration):
    pair = table[agent_id]
    return encode_message(UpdateMsg(iteration, agent_id, pair.policy, pair.target, 0.5, 0.25))


def test_collect_ignores_duplicates_and_stale_updates(small_cfg):
    cfg = small_cfg(env=ISING, M=4)
    env = make_env(env_config(cfg))
    controller, learners = _fake_controller(cfg, env)
    table = init_policy_table(env, cfg)
    for i, channel in learners.items():
        channel.send(encode_message(Heartbeat()))
        channel.send(_update(table, i, 0))
        channel.send(_update(table, i, 0))
    received = controller.collect_updates(0, timeout=5)
    assert sorted(received) == [0, 1, 2, 3]
    assert set(controller.last_seen) == {0, 1, 2, 3}

    for i, channel in learners.items():
        channel.send(_update(table, i, 1))
    assert sorted(controller.collect_updates(1, timeout=5)) == [0, 1, 2, 3]
    controller.shutdown()


def test_collect_names_missing_agents(small_cfg):
    cfg = small_cfg(env=ISING, M=4)
    env = make_env(env_config(cfg))
    controller, learners = _fake_controller(cfg, env)
    table = init_policy_table(env, cfg)
    learners[0].send(_update(table, 0, 0))
    learners[2].send(_update(table, 2, 0))
    with pytest.raises(CoordinatorError) as info:
        controller.collect_updates(0, timeout=0.2)
    assert info.value.missing == (1, 3)
    controller.shutdown()


def test_collect_rejects_update_for_wrong_agent(small_cfg):
    cfg = small_cfg(env=ISING, M=4)
    env = make_env(env_config(cfg))
    controller, learners = _fake_controller(cfg, env)
    learners[0].send(_update(init_policy_table(env, cfg), 1, 0))
    with pytest.raises(ValueError):
        controller.collect_updates(0, timeout=5)
    controller.shutdown()


def test_learner_resends_cached_update_for_repeated_iteration(small_cfg):
    cfg = small_cfg(env=ISING, M=4)
    env = make_env(env_config(cfg))
    controller_end, learner_end = queue_pair()
    worker = threading.Thread(target=serve_learner, args=(learner_end, env, cfg, 2), daemon=True)
    worker.start()
    table = init_policy_table(env, cfg)
    params = encode_message(ParamMsg(0, [p.policy for p in table], [p.target for p in table]))

    def next_update():
        while True:
            msg = decode_message(controller_end.recv(timeout=30), env.policy_head)
            if isinstance(msg, UpdateMsg):
                return msg

    controller_end.send(params)
    first = next_update()
    controller_end.send(params)
    second = next_update()
    assert first.agent_id == second.agent_id == 2
    assert (first.collect_s, first.update_s) == (second.collect_s, second.update_s)
    for x, y in zip(first.policy.arrays(), second.policy.arrays()):
        np.testing.assert_array_equal(x, y)
    controller_end.send(encode_message(Shutdown()))
    worker.join(timeout=30)
    assert not worker.is_alive()


def test_policy_table_survives_save_and_load(small_cfg, tmp_path):
    cfg = small_cfg(env=GRASSLAND, M=4)
    env = make_env(env_config(cfg))
    table = init_policy_table(env, cfg)
    save_policy_table(table, tmp_path / "policies")
    loaded = load_policy_table(tmp_path / "policies", env.num_agents, env.policy_head)
    _assert_tables_equal(table, [loaded[i] for i in range(env.num_agents)])
    with pytest.raises(FileNotFoundError):
        load_policy_table(tmp_path / "policies", 5, env.policy_head)


def test_frozen_adversaries_load_saved_policies(small_cfg, tmp_path):
    saved_cfg = small_cfg(env=GRASSLAND, M=4, seed=99)
    env = make_env(env_config(saved_cfg))
    saved = init_policy_table(env, saved_cfg)
    save_policy_table(saved, tmp_path / "adversaries")

    cfg = small_cfg(env=GRASSLAND, M=4, adversary_mode="frozen", adversary_params_dir=str(tmp_path / "adversaries"))
    table = initial_table(env, cfg)
    _assert_tables_equal(table[2:], saved[2:])
    fresh = init_policy_table(env, cfg)
    _assert_tables_equal(table[:2], fresh[:2])

    result = run_training(cfg)
    _assert_tables_equal(result.table[2:], saved[2:])


def test_inproc_training_is_reproducible(small_cfg):
    cfg = small_cfg(env=ISING, M=4, max_iterations=3)
    first = run_training(cfg)
    second = run_training(cfg)
    assert [r.iteration for r in first.rows] == [0, 1, 2]
    assert [r.avg_total_reward for r in first.rows] == [r.avg_total_reward for r in second.rows]
    _assert_tables_equal(first.table, second.table)


def test_eval_every_thins_metrics_rows(small_cfg):
    cfg = small_cfg(env=ISING, M=4, max_iterations=4, eval_every=2)
    assert [r.iteration for r in run_training(cfg).rows] == [1, 3]


@pytest.mark.slow
def test_tcp_transport_matches_inproc(small_cfg):
    inproc = run_training(small_cfg(env=GRASSLAND, M=4, transport="inproc", adversary_mode="cotrain"))
    tcp = run_training(small_cfg(env=GRASSLAND, M=4, transport="tcp", adversary_mode="cotrain"))
    assert [r.avg_total_reward for r in inproc.rows] == [r.avg_total_reward for r in tcp.rows]
    _assert_tables_equal(inproc.table, tcp.table)


@pytest.mark.slow
def test_tcp_transport_matches_inproc_on_ising(small_cfg):
    inproc = run_training(small_cfg(env=ISING, M=4, max_iterations=10, transport="inproc"))
    tcp = run_training(small_cfg(env=ISING, M=4, max_iterations=10, transport="tcp"))
    _assert_tables_equal(inproc.table, tcp.table)


@pytest.mark.slow
def test_ising_team_learns_to_align(small_cfg):
    cfg = small_cfg(env=ISING, M=9, hidden_units=32, batch_size=32, max_transition_number=25, episode_length=25,
                    max_iterations=300, eval_every=30, eval_episodes=5)
    rewards = [r.avg_total_reward for r in run_training(cfg).rows]
    assert len(rewards) == 10
    assert np.mean(rewards[-3:]) > rewards[0]


def test_collect_timeout_reports_when_agents_were_last_heard(small_cfg):
    cfg = small_cfg(env=ISING, M=4)
    env = make_env(env_config(cfg))
    controller, learners = _fake_controller(cfg, env)
    table = init_policy_table(env, cfg)
    learners[0].send(_update(table, 0, 0))
    learners[1].send(encode_message(Heartbeat()))
    with pytest.raises(CoordinatorError, match=r"agent 1 last heard .*s ago; agent 2 never heard from"):
        controller.collect_updates(0, timeout=0.2)
    controller.shutdown()


def test_learner_reports_its_error_instead_of_dying_silently(small_cfg, monkeypatch):
    cfg = small_cfg(env=ISING, M=4)
    env = make_env(env_config(cfg))

    def broken_iteration(learner, iteration, table):
        raise FloatingPointError("non-finite critic loss")

    monkeypatch.setattr(coordinator, "run_iteration", broken_iteration)
    controller_end, learner_end = queue_pair()
    worker = threading.Thread(target=serve_learner, args=(learner_end, env, cfg, 1), daemon=True)
    worker.start()
    table = init_policy_table(env, cfg)
    controller_end.send(encode_message(ParamMsg(3, [p.policy for p in table], [p.target for p in table])))
    while True:
        msg = decode_message(controller_end.recv(timeout=30), env.policy_head)
        if isinstance(msg, LearnerFailure):
            break
    assert (msg.iteration, msg.agent_id) == (3, 1)
    assert msg.reason == "FloatingPointError: non-finite critic loss"
    worker.join(timeout=30)
    assert not worker.is_alive()


def test_learner_error_aborts_training_with_its_cause(small_cfg, monkeypatch):
    def broken_iteration(learner, iteration, table):
        raise FloatingPointError("non-finite critic loss")

    monkeypatch.setattr(coordinator, "run_iteration", broken_iteration)
    cfg = small_cfg(env=ISING, M=4, collect_timeout=60.0)
    started = time.monotonic()
    with pytest.raises(CoordinatorError, match="FloatingPointError: non-finite critic loss") as info:
        run_training(cfg)
    assert time.monotonic() - started < 30
    assert len(info.value.missing) == 1
