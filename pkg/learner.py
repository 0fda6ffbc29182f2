"""
Per-agent DARL1N learner.

A learner owns agent i's critic (online + target), local copies of every
agent's policy pair, and a replay buffer of one-step local interactions. Each
iteration it:

1. installs the policy table broadcast by the controller
2. collects ``max_transition_number`` one-step samples, each from a freshly
   randomized world, simulating only agent i's potential neighbors and then the
   potential neighbors of its next one-hop neighbors
3. takes one critic step, one actor step and a Polyak step on both targets
4. returns its updated policy pair with collection/update timings

The critic/actor kernels (fit_critic, improve_actor, target_actions) are shared
with the centralized baseline.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np

import proximity
from envs import ADVERSARY_TEAM
from neural_net import (
    LINEAR,
    MlpParams,
    PadSpec,
    adam_init,
    adam_step,
    encode_neighborhood,
    init_mlp,
    mlp_backward,
    mlp_forward,
    polyak_update,
)
from seeding import derive_seed, stream

logger = logging.getLogger(__name__)


@dataclass
class PolicyPair:
    policy: MlpParams
    target: MlpParams

    def copy(self):
        return PolicyPair(self.policy.copy(), self.target.copy())


@dataclass(frozen=True)
class InteractionRecord:
    agent_id: int
    neighbors: Tuple[int, ...]
    states: Dict[int, np.ndarray]
    actions: Dict[int, np.ndarray]
    reward: float
    next_neighbors: Tuple[int, ...]
    # j -> (next one-hop ids of j, features of those agents at t+1)
    next_neighborhoods: Dict[int, Tuple[Tuple[int, ...], Dict[int, np.ndarray]]]
    simulated: FrozenSet[int] = frozenset()

    def referenced_ids(self):
        ids = set(self.neighbors) | set(self.next_neighbors)
        for members, _ in self.next_neighborhoods.values():
            ids.update(members)
        return ids


class ReplayBuffer:
    """
    FIFO ring buffer; the oldest record is evicted at capacity.

    Slots fill up to ``capacity`` and are then overwritten in place, so any
    record is reached in O(1). Index k of a sample counts from the oldest record.
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("replay buffer capacity must be >= 1")
        self.capacity = capacity
        self._records = []
        self._oldest = 0

    def __len__(self):
        return len(self._records)

    def add(self, record):
        if len(self._records) < self.capacity:
            self._records.append(record)
            return
        self._records[self._oldest] = record
        self._oldest = (self._oldest + 1) % self.capacity

    def __getitem__(self, k):
        if not 0 <= k < len(self._records):
            raise IndexError(f"record {k} of a buffer holding {len(self._records)}")
        return self._records[(self._oldest + k) % len(self._records)]

    def sample(self, rng, size):
        if size > len(self._records):
            raise ValueError(f"cannot sample {size} records from a buffer holding {len(self._records)}")
        picks = rng.choice(len(self._records), size=size, replace=False)
        return [self[int(k)] for k in picks]


@dataclass
class LearnerUpdate:
    agent_id: int
    iteration: int
    policy: MlpParams
    target: MlpParams
    collect_s: float = 0.0
    update_s: float = 0.0


@dataclass
class LearnerState:
    agent_id: int
    env: object
    cfg: object
    critic: MlpParams
    target_critic: MlpParams
    critic_adam: object
    policy_adam: object
    policies: List[PolicyPair]
    buffer: ReplayBuffer
    frozen: bool = False
    last_update: Optional[LearnerUpdate] = None
    last_loss: float = field(default=float("nan"))


# -- construction ----------------------------------------------------------


def hidden_sizes(cfg):
    return [cfg.hidden_units] * cfg.hidden_layers


def init_policy_table(env, cfg):
    """Policy pair for every agent; targets start as exact copies."""
    spec = env.pad_spec
    sizes = [spec.policy_length] + hidden_sizes(cfg) + [env.action_dim]
    table = []
    for m in range(env.num_agents):
        policy = init_mlp(sizes, env.policy_head, stream(cfg.seed, m, "policy"))
        table.append(PolicyPair(policy, policy.copy()))
    return table


def init_critic(input_length, cfg, agent_id):
    critic = init_mlp([input_length] + hidden_sizes(cfg) + [1], LINEAR, stream(cfg.seed, agent_id, "critic"))
    return critic, critic.copy()


def is_frozen(env, cfg, agent_id):
    return cfg.adversary_mode == "frozen" and env.team_of(agent_id) == ADVERSARY_TEAM


def make_learner(env, cfg, agent_id):
    if not 0 <= agent_id < env.num_agents:
        raise ValueError(f"invalid agent id {agent_id} for a team of {env.num_agents}")
    critic, target_critic = init_critic(env.pad_spec.critic_length, cfg, agent_id)
    policies = init_policy_table(env, cfg)
    return LearnerState(
        agent_id=agent_id,
        env=env,
        cfg=cfg,
        critic=critic,
        target_critic=target_critic,
        critic_adam=adam_init(critic, cfg.lr),
        policy_adam=adam_init(policies[agent_id].policy, cfg.lr),
        policies=policies,
        buffer=ReplayBuffer(cfg.buffer_size),
        frozen=is_frozen(env, cfg, agent_id),
    )


# -- data collection -------------------------------------------------------


def policy_action(policies, features_by_id, j, spec):
    encoded = encode_neighborhood(features_by_id, None, j, spec)
    action, _ = mlp_forward(policies[j].policy, encoded)
    return action


def collect_local_interaction(env, learner, collect_seed, sample_index):
    """
    One-step local interaction for the learner's agent from a random world.

    Only the potential neighbors of i and, for every next one-hop neighbor j of
    i, the potential neighbors of j are transitioned. Agent j's transition uses
    its own stream so the outcome does not depend on which agents are simulated.
    """
    i = learner.agent_id
    graph = env.graph
    spec = env.pad_spec
    rng = stream(collect_seed, sample_index)
    world = env.reset(rng)
    agents, furniture = world.agents, world.furniture
    sigma = learner.cfg.exploration_sigma

    features = {}
    actions = {}

    def feature(j):
        if j not in features:
            features[j] = env.observe(agents[j], furniture)
        return features[j]

    def action(j):
        if j not in actions:
            members = proximity.one_hop_neighbors(agents, graph, j)
            raw = policy_action(learner.policies, {k: feature(k) for k in members}, j, spec)
            actions[j] = env.explore(raw, sigma, rng)
        return actions[j]

    neighbors = proximity.one_hop_neighbors(agents, graph, i)
    states = {j: feature(j) for j in neighbors}
    local_actions = {j: action(j) for j in neighbors}
    reward = env.reward(i, {j: agents[j] for j in neighbors}, local_actions, furniture)

    advanced = {}

    def advance(j):
        if j not in advanced:
            local = {k: agents[k] for k in proximity.one_hop_neighbors(agents, graph, j)}
            advanced[j] = env.transition_agent(j, local, action(j), stream(collect_seed, sample_index, j))
        return advanced[j]

    for j in proximity.potential_neighbors(agents, graph, i):
        advance(j)
    next_neighbors = proximity.neighbors_among(advanced, graph, i)

    next_neighborhoods = {}
    for j in next_neighbors:
        reach = proximity.potential_neighbors(agents, graph, j)
        for k in reach:
            advance(k)
        members = proximity.neighbors_among({k: advanced[k] for k in reach}, graph, j)
        next_neighborhoods[j] = (members, {k: env.observe(advanced[k], furniture) for k in members})

    return InteractionRecord(
        agent_id=i,
        neighbors=neighbors,
        states=states,
        actions=local_actions,
        reward=float(reward),
        next_neighbors=next_neighbors,
        next_neighborhoods=next_neighborhoods,
        simulated=frozenset(advanced),
    )


# -- shared update kernels -------------------------------------------------


def target_actions(requests, target_policies, spec):
    """
    Target-policy actions for a list of (agent j, features of j's neighborhood).

    Requests are batched per agent so each target network runs once.
    """
    by_agent = {}
    for position, (j, feats) in enumerate(requests):
        by_agent.setdefault(j, []).append((position, encode_neighborhood(feats, None, j, spec)))
    out = [None] * len(requests)
    for j, items in by_agent.items():
        batch = np.stack([encoded for _, encoded in items])
        acts, _ = mlp_forward(target_policies[j], batch)
        for (position, _), act in zip(items, acts):
            out[position] = act
    return out


def critic_gradient(critic, inputs, targets):
    """Mean squared TD error and its gradient; targets are constants."""
    q, cache = mlp_forward(critic, inputs)
    diff = q[:, 0] - targets
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite critic loss")
    grads, _ = mlp_backward(critic, cache, (2.0 * diff / len(diff))[:, None])
    return loss, grads


def fit_critic(critic, adam, inputs, targets):
    """One Adam step on the critic loss."""
    loss, grads = critic_gradient(critic, inputs, targets)
    critic, adam = adam_step(critic, grads, adam)
    return loss, critic, adam


def actor_gradient(policy, critic, policy_inputs, critic_inputs, action_slice):
    """
    Gradient of -mean Q(s, a) with the subject's action slot replaced by the
    policy's output; other agents' actions stay as recorded.
    """
    acts, policy_cache = mlp_forward(policy, policy_inputs)
    x = np.array(critic_inputs, dtype=np.float64, copy=True)
    x[:, action_slice] = acts
    q, critic_cache = mlp_forward(critic, x)
    _, dx = mlp_backward(critic, critic_cache, np.full(q.shape, -1.0 / len(q)))
    grads, _ = mlp_backward(policy, policy_cache, dx[:, action_slice])
    return grads, float(np.mean(q))


def improve_actor(policy, adam, critic, policy_inputs, critic_inputs, action_slice):
    grads, _ = actor_gradient(policy, critic, policy_inputs, critic_inputs, action_slice)
    if not grads.is_finite():
        raise FloatingPointError("non-finite actor gradient")
    return adam_step(policy, grads, adam)


# -- learner-side updates --------------------------------------------------


def _next_inputs(records, target_policies, spec):
    requests = []
    for record in records:
        for j in record.next_neighbors:
            if j not in record.next_neighborhoods:
                raise ValueError(f"record of agent {record.agent_id} lacks the next neighborhood of agent {j}")
            requests.append((j, record.next_neighborhoods[j][1]))
    acts = iter(target_actions(requests, target_policies, spec))
    rows = []
    for record in records:
        next_actions = {j: next(acts) for j in record.next_neighbors}
        _, own_next = record.next_neighborhoods[record.agent_id]
        rows.append(encode_neighborhood(own_next, next_actions, record.agent_id, spec))
    return np.stack(rows)


def td_targets(records, target_policies, target_critic, spec, gamma):
    """y = r + gamma * Q_target(s', a') with a' from the target policies."""
    if not records:
        return np.zeros(0)
    q_next, _ = mlp_forward(target_critic, _next_inputs(records, target_policies, spec))
    rewards = np.array([record.reward for record in records])
    return rewards + gamma * q_next[:, 0]


def td_target(record, target_policies, target_critic, spec: PadSpec, gamma):
    return float(td_targets([record], target_policies, target_critic, spec, gamma)[0])


def _critic_inputs(records, spec):
    return np.stack([encode_neighborhood(r.states, r.actions, r.agent_id, spec) for r in records])


def _policy_inputs(records, spec):
    return np.stack([encode_neighborhood(r.states, None, r.agent_id, spec) for r in records])


def critic_update(learner, records):
    if not records:
        raise ValueError("critic update needs a non-empty batch")
    spec = learner.env.pad_spec
    targets = td_targets(records, [p.target for p in learner.policies], learner.target_critic,
                         spec, learner.cfg.gamma)
    loss, learner.critic, learner.critic_adam = fit_critic(
        learner.critic, learner.critic_adam, _critic_inputs(records, spec), targets
    )
    learner.last_loss = loss
    return loss, learner.critic


def actor_update(learner, records):
    if not records:
        raise ValueError("actor update needs a non-empty batch")
    spec = learner.env.pad_spec
    own = learner.policies[learner.agent_id]
    policy, learner.policy_adam = improve_actor(
        own.policy, learner.policy_adam, learner.critic,
        _policy_inputs(records, spec), _critic_inputs(records, spec), spec.action_slice(0),
    )
    learner.policies[learner.agent_id] = PolicyPair(policy, own.target)
    return policy


def soft_update_targets(learner):
    tau = learner.cfg.tau
    learner.target_critic = polyak_update(learner.target_critic, learner.critic, tau)
    own = learner.policies[learner.agent_id]
    learner.policies[learner.agent_id] = PolicyPair(own.policy, polyak_update(own.target, own.policy, tau))


def install_policies(learner, table: List[PolicyPair]):
    if len(table) != learner.env.num_agents:
        raise ValueError(f"policy table holds {len(table)} agents, expected {learner.env.num_agents}")
    learner.policies = [pair.copy() for pair in table]


def should_update(cfg, iteration):
    return (iteration + 1) % cfg.update_every == 0


def run_iteration(learner, iteration, table: List[PolicyPair]) -> LearnerUpdate:
    """Install the broadcast policies, collect, update, and report the agent's new policy pair."""
    install_policies(learner, table)
    i = learner.agent_id
    cfg = learner.cfg
    if learner.frozen:
        own = learner.policies[i]
        learner.last_update = LearnerUpdate(i, iteration, own.policy, own.target)
        return learner.last_update

    started = time.perf_counter()
    collect_seed = derive_seed(cfg.seed, i, iteration, "collect")
    for n in range(cfg.max_transition_number):
        learner.buffer.add(collect_local_interaction(learner.env, learner, collect_seed, n))
    collect_s = time.perf_counter() - started

    started = time.perf_counter()
    if should_update(cfg, iteration):
        if len(learner.buffer) >= cfg.batch_size:
            batch = learner.buffer.sample(stream(cfg.seed, i, iteration, "sample"), cfg.batch_size)
            critic_update(learner, batch)
            actor_update(learner, batch)
            soft_update_targets(learner)
        else:
            logger.debug(f"agent {i}: buffer holds {len(learner.buffer)} < batch {cfg.batch_size}, skipping update")
    update_s = time.perf_counter() - started

    own = learner.policies[i]
    learner.last_update = LearnerUpdate(i, iteration, own.policy, own.target, collect_s, update_s)
    return learner.last_update


def local_access_bound(env, agents, i, record):
    """Agents a collection step may transition: P_i plus P_j for each next neighbor j."""
    allowed = set(proximity.potential_neighbors(agents, env.graph, i))
    for j in record.next_neighbors:
        allowed.update(proximity.potential_neighbors(agents, env.graph, j))
    return allowed
