"""
Centralized-critic MADDPG baseline.

Single process, single thread. Every sample simulates the whole team jointly,
and each agent's critic sees the full joint state and action (subject first,
then ascending ids). Policies keep the decentralized one-hop inputs used by
DARL1N, and the critic/actor/Polyak steps are the kernels from ``learner``, so
with one agent both trainers follow the same parameter trajectory.

Sampling follows the same one-step protocol as the learners: every sample
starts from a freshly randomized world drawn from agent 0's collection stream.
"""

import logging
import time
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

import proximity
from coordinator import TrainingResult, evaluate, initial_table, is_eval_point
from envs import make_env
from learner import (
    PolicyPair,
    ReplayBuffer,
    fit_critic,
    improve_actor,
    init_critic,
    is_frozen,
    policy_action,
    should_update,
    target_actions,
)
from neural_net import PadSpec, adam_init, encode_neighborhood, mlp_forward, polyak_update
from reporting import MetricsRow, log_metrics_row
from run_config import env_config
from seeding import derive_seed, stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CentralRecord:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    neighbors: Tuple[Tuple[int, ...], ...]
    next_neighbors: Tuple[Tuple[int, ...], ...]


@dataclass
class MaddpgState:
    env: object
    cfg: object
    central_spec: PadSpec
    critics: list
    target_critics: list
    critic_adams: list
    policy_adams: list
    table: List[PolicyPair]
    buffer: ReplayBuffer
    frozen: Tuple[bool, ...]


def make_maddpg(env, cfg, table=None):
    table = initial_table(env, cfg) if table is None else table
    central_spec = PadSpec(env.num_agents, env.obs_dim, env.action_dim)
    critics, targets = zip(*(init_critic(central_spec.critic_length, cfg, i) for i in range(env.num_agents)))
    return MaddpgState(
        env=env,
        cfg=cfg,
        central_spec=central_spec,
        critics=list(critics),
        target_critics=list(targets),
        critic_adams=[adam_init(c, cfg.lr) for c in critics],
        policy_adams=[adam_init(pair.policy, cfg.lr) for pair in table],
        table=table,
        buffer=ReplayBuffer(cfg.buffer_size),
        frozen=tuple(is_frozen(env, cfg, i) for i in range(env.num_agents)),
    )


def collect_joint_transition(state, collect_seed, sample_index) -> CentralRecord:
    """Joint one-step transition of the whole team from a random world."""
    env = state.env
    graph = env.graph
    spec = env.pad_spec
    rng = stream(collect_seed, sample_index)
    world = env.reset(rng)
    agents, furniture = world.agents, world.furniture
    neighborhoods = proximity.all_one_hop_neighbors(agents, graph)
    features = env.observations(world)

    actions = []
    for j, members in enumerate(neighborhoods):
        raw = policy_action(state.table, {k: features[k] for k in members}, j, spec)
        actions.append(env.explore(raw, state.cfg.exploration_sigma, rng))

    rewards = np.zeros(env.num_agents)
    next_agents = np.empty_like(agents)
    for j, members in enumerate(neighborhoods):
        local = {k: agents[k] for k in members}
        rewards[j] = env.reward(j, local, {k: actions[k] for k in members}, furniture)
        next_agents[j] = env.transition_agent(j, local, actions[j], stream(collect_seed, sample_index, j))

    next_features = np.stack([env.observe(next_agents[j], furniture) for j in range(env.num_agents)])
    return CentralRecord(
        states=np.stack(features),
        actions=np.stack(actions),
        rewards=rewards,
        next_states=next_features,
        neighbors=tuple(neighborhoods),
        next_neighbors=tuple(proximity.all_one_hop_neighbors(next_agents, graph)),
    )


def _joint(matrix):
    return {k: matrix[k] for k in range(len(matrix))}


def central_td_targets(records, i, target_policies, target_critic, state):
    env = state.env
    requests = [
        (j, {k: record.next_states[k] for k in record.next_neighbors[j]})
        for record in records
        for j in range(env.num_agents)
    ]
    acts = iter(target_actions(requests, target_policies, env.pad_spec))
    rows = []
    for record in records:
        next_actions = {j: next(acts) for j in range(env.num_agents)}
        rows.append(encode_neighborhood(_joint(record.next_states), next_actions, i, state.central_spec))
    q_next, _ = mlp_forward(target_critic, np.stack(rows))
    rewards = np.array([record.rewards[i] for record in records])
    return rewards + state.cfg.gamma * q_next[:, 0]


def update_agent(state, i, records, start_targets):
    """Critic then actor step for agent i; returns the new (critic, policy)."""
    env = state.env
    critic_inputs = np.stack([
        encode_neighborhood(_joint(r.states), _joint(r.actions), i, state.central_spec) for r in records
    ])
    targets = central_td_targets(records, i, start_targets, state.target_critics[i], state)
    _, critic, state.critic_adams[i] = fit_critic(state.critics[i], state.critic_adams[i], critic_inputs, targets)
    policy_inputs = np.stack([
        encode_neighborhood({k: r.states[k] for k in r.neighbors[i]}, None, i, env.pad_spec) for r in records
    ])
    policy, state.policy_adams[i] = improve_actor(
        state.table[i].policy, state.policy_adams[i], critic,
        policy_inputs, critic_inputs, state.central_spec.action_slice(0),
    )
    return critic, policy


def maddpg_iteration(state, iteration):
    """Collect joint samples, update every trainable agent, then Polyak all targets. Returns timings."""
    cfg = state.cfg
    started = time.perf_counter()
    collect_seed = derive_seed(cfg.seed, 0, iteration, "collect")
    for n in range(cfg.max_transition_number):
        state.buffer.add(collect_joint_transition(state, collect_seed, n))
    collect_s = time.perf_counter() - started

    started = time.perf_counter()
    if should_update(cfg, iteration) and len(state.buffer) >= cfg.batch_size:
        start_targets = [pair.target for pair in state.table]
        fresh = {}
        for i in range(state.env.num_agents):
            if state.frozen[i]:
                continue
            batch = state.buffer.sample(stream(cfg.seed, i, iteration, "sample"), cfg.batch_size)
            fresh[i] = update_agent(state, i, batch, start_targets)
        for i, (critic, policy) in fresh.items():
            state.critics[i] = critic
            state.target_critics[i] = polyak_update(state.target_critics[i], critic, cfg.tau)
            state.table[i] = PolicyPair(policy, polyak_update(state.table[i].target, policy, cfg.tau))
    update_s = time.perf_counter() - started
    return collect_s, update_s


def run_baseline(cfg, max_iterations=None) -> TrainingResult:
    env = make_env(env_config(cfg))
    iterations = cfg.max_iterations if max_iterations is None else max_iterations
    state = make_maddpg(env, cfg)
    rows = []
    logger.info(f"🚀 Training maddpg on {cfg.env} with M={cfg.M} for {iterations} iterations")
    started = time.perf_counter()
    for iteration in range(iterations):
        collect_s, update_s = maddpg_iteration(state, iteration)
        if not is_eval_point(cfg, iteration):
            continue
        row = MetricsRow(iteration, time.perf_counter() - started, evaluate(env, state.table, cfg, iteration),
                         collect_s, update_s)
        rows.append(row)
        log_metrics_row(row)
    logger.info(f"✅ Baseline finished after {iterations} iterations")
    return TrainingResult(rows, state.table)
