"""
Desk-scale multi-agent environments.

Four scenarios share one interface (``Environment``):

- ``ising``               spins on a sqrt(M) x sqrt(M) torus, lattice adjacency
- ``food_collection``     particles foraging pellets
- ``grassland``           good particles forage grass, adversaries tag them
- ``adversarial_battle``  two teams capture resources and gang up on opponents

Every reward term and every transition reads only the agent's one-hop
neighborhood (plus static furniture such as pellets), so rewards and
transitions are local by construction, and motion per step never exceeds the
configured epsilon.

A world is the agent state matrix plus furniture positions. Network inputs are
per-agent feature vectors produced by ``observe``.
"""

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

import proximity
from neural_net import SOFTMAX, TANH, PadSpec, encode_neighborhood, mlp_forward
from seeding import stream

logger = logging.getLogger(__name__)

ISING = "ising"
FOOD_COLLECTION = "food_collection"
GRASSLAND = "grassland"
ADVERSARIAL_BATTLE = "adversarial_battle"
ENV_KINDS = (ISING, FOOD_COLLECTION, GRASSLAND, ADVERSARIAL_BATTLE)
PARTICLE_KINDS = (FOOD_COLLECTION, GRASSLAND, ADVERSARIAL_BATTLE)
MIXED_KINDS = (GRASSLAND, ADVERSARIAL_BATTLE)

ISING_REWARD_BOUND = 1.0
PARTICLE_REWARD_BOUND = 10.0

# Reward constants for the particle scenarios.
PICKUP_RADIUS = 0.05
COLLISION_RADIUS = 0.05
PICKUP_BONUS = 5.0
COLLISION_PENALTY = 1.0
TAG_BONUS = 5.0
FREEZE_STEPS = 5
FROZEN_PENALTY = 2.0
CAPTURE_REWARD = 5.0
KILL_PENALTY = 10.0
KILL_BONUS = 10.0

GOOD_TEAM = 0.0
ADVERSARY_TEAM = 1.0

_ACTION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class EnvConfig:
    kind: str
    num_agents: int
    episode_length: int = 25
    box: float = 1.0
    d: float = 0.15
    epsilon: float = 0.05
    reward_bound: Optional[float] = None
    furniture_count: Optional[int] = None
    adversary_count: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}, expected one of {ENV_KINDS}")
        if self.num_agents < 1:
            raise ValueError("an environment needs at least one agent")
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if not self.box > 0:
            raise ValueError("activity box half-width must be > 0")
        if self.reward_bound is not None and not self.reward_bound > 0:
            raise ValueError("reward bound must be > 0")


@dataclass
class World:
    agents: np.ndarray
    furniture: np.ndarray

    def copy(self):
        return World(self.agents.copy(), self.furniture.copy())


@dataclass
class StepOutcome:
    world: World
    rewards: np.ndarray


def _generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class Environment:
    """Shared plumbing; subclasses define state layout, dynamics and rewards."""

    kind = None
    discrete = False
    state_dim = 0
    obs_dim = 0
    action_dim = 0
    default_reward_bound = PARTICLE_REWARD_BOUND

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.num_agents = cfg.num_agents
        self.episode_length = cfg.episode_length
        self.reward_bound = cfg.reward_bound if cfg.reward_bound is not None else self.default_reward_bound
        self.graph = self._graph_config()

    # -- layout -----------------------------------------------------------

    def _graph_config(self):
        raise NotImplementedError

    @property
    def max_neighbors(self):
        return self.num_agents

    @property
    def pad_spec(self):
        return PadSpec(self.max_neighbors, self.obs_dim, self.action_dim)

    @property
    def policy_head(self):
        return SOFTMAX if self.discrete else TANH

    def team_of(self, i):
        return GOOD_TEAM

    # -- hooks ------------------------------------------------------------

    def reset(self, seed) -> World:
        raise NotImplementedError

    def sample_world(self, rng):
        """Random world used by conformance probes; covers every state component."""
        return self.reset(rng)

    def observe(self, state, furniture):
        raise NotImplementedError

    def transition_agent(self, i, local: Mapping[int, np.ndarray], action, rng):
        raise NotImplementedError

    def reward(self, i, local_states: Mapping[int, np.ndarray], local_actions: Mapping[int, np.ndarray],
               furniture) -> float:
        raise NotImplementedError

    def validate_action(self, action):
        raise NotImplementedError

    def explore(self, action, sigma, rng):
        raise NotImplementedError

    def greedy_action(self, action):
        return np.asarray(action, dtype=np.float64)

    def random_action(self, rng):
        raise NotImplementedError

    def perturb_outside(self, agents, keep, anchor, rng):
        """Copy of ``agents`` where every agent not in ``keep`` is re-drawn away from ``anchor``."""
        raise NotImplementedError

    def _update_furniture(self, agents, furniture, rng):
        return furniture

    # -- shared behaviour -------------------------------------------------

    def _check_local(self, i, local_states, local_actions=None):
        if i not in local_states:
            raise ValueError(f"agent {i} must be part of its own neighborhood")
        if local_actions is not None and set(local_actions) != set(local_states):
            raise ValueError("local states and local actions cover different agents")
        own = local_states[i]
        for j, state in local_states.items():
            if proximity.distance(own, state, self.graph) > self.graph.d + proximity.DISTANCE_SLACK:
                raise ValueError(f"agent {j} is outside the one-hop neighborhood of agent {i}")

    def observations(self, world):
        return [self.observe(world.agents[j], world.furniture) for j in range(self.num_agents)]

    def act(self, world, policies, greedy=True):
        """Actions of every agent from its own policy over its one-hop neighborhood."""
        if len(policies) != self.num_agents:
            raise ValueError(f"{len(policies)} policies for {self.num_agents} agents")
        obs = self.observations(world)
        neighborhoods = proximity.all_one_hop_neighbors(world.agents, self.graph)
        spec = self.pad_spec
        actions = np.zeros((self.num_agents, self.action_dim))
        for j, members in enumerate(neighborhoods):
            encoded = encode_neighborhood({k: obs[k] for k in members}, None, j, spec)
            action, _ = mlp_forward(policies[j], encoded)
            actions[j] = self.greedy_action(action) if greedy else action
        return actions

    def step(self, world, actions, rng) -> StepOutcome:
        """Full-environment step: every agent is rewarded and transitions."""
        rng = _generator(rng)
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.num_agents, self.action_dim):
            raise ValueError(f"actions shape {actions.shape}, expected ({self.num_agents}, {self.action_dim})")
        neighborhoods = proximity.all_one_hop_neighbors(world.agents, self.graph)
        agent_seeds = rng.integers(0, 2**32 - 1, size=self.num_agents)
        rewards = np.zeros(self.num_agents)
        next_agents = np.empty_like(world.agents)
        for i, members in enumerate(neighborhoods):
            local = {j: world.agents[j] for j in members}
            rewards[i] = self.reward(i, local, {j: actions[j] for j in members}, world.furniture)
            next_agents[i] = self.transition_agent(i, local, actions[i], np.random.default_rng(agent_seeds[i]))
        furniture = self._update_furniture(next_agents, world.furniture, rng)
        return StepOutcome(World(next_agents, furniture), rewards)


class IsingEnv(Environment):
    """
    Spins on a torus. State row: [row, col, spin]; action: probabilities over
    {-1, +1}; reward: mean alignment of the agent's chosen spin with the spins
    chosen by its 4 lattice neighbors, in [-1, 1].
    """

    kind = ISING
    discrete = True
    state_dim = 3
    obs_dim = 1
    action_dim = 2
    default_reward_bound = ISING_REWARD_BOUND

    def __init__(self, cfg):
        side = math.isqrt(cfg.num_agents)
        if side * side != cfg.num_agents:
            raise ValueError(f"the Ising lattice needs a square agent count, got M={cfg.num_agents}")
        self.side = side
        super().__init__(cfg)

    def _graph_config(self):
        return proximity.GraphConfig(d=1.0, epsilon=0.0, metric=proximity.LATTICE,
                                     position_dims=2, lattice_side=self.side)

    @property
    def max_neighbors(self):
        # side 1 wraps onto itself, side 2 has two distinct neighbors per agent
        return {1: 1, 2: 3}.get(self.side, 5)

    def reset(self, seed):
        rng = _generator(seed)
        ids = np.arange(self.num_agents)
        spins = rng.choice(np.array([-1.0, 1.0]), size=self.num_agents)
        agents = np.column_stack([ids // self.side, ids % self.side, spins]).astype(np.float64)
        return World(agents, np.zeros((0, 2)))

    def observe(self, state, furniture):
        return np.array([state[2]], dtype=np.float64)

    def validate_action(self, action):
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (2,) or not np.all(np.isfinite(a)) or np.any(a < -_ACTION_TOLERANCE) or a.sum() <= 0:
            raise ValueError(f"Ising action must be a non-negative weight pair, got {action!r}")
        return a

    @staticmethod
    def spin_of(action):
        """Expected spin under the action's probability pair."""
        a = action / action.sum()
        return float(a[1] - a[0])

    def transition_agent(self, i, local, action, rng):
        if i not in local:
            raise ValueError(f"agent {i} must be part of its own neighborhood")
        a = self.validate_action(action)
        state = np.array(local[i], dtype=np.float64)
        state[2] = 1.0 if int(np.argmax(a)) == 1 else -1.0
        return state

    def reward(self, i, local_states, local_actions, furniture):
        self._check_local(i, local_states, local_actions)
        own = self.spin_of(self.validate_action(local_actions[i]))
        aligned = sum(
            own * self.spin_of(self.validate_action(local_actions[j]))
            for j in local_states if j != i
        )
        return aligned / 4.0

    def explore(self, action, sigma, rng):
        noisy = np.clip(np.asarray(action, dtype=np.float64) + rng.normal(0.0, sigma, size=2), 0.0, 1.0)
        total = noisy.sum()
        return noisy / total if total > 0 else np.full(2, 0.5)

    def greedy_action(self, action):
        onehot = np.zeros(2)
        onehot[int(np.argmax(action))] = 1.0
        return onehot

    def random_action(self, rng):
        return rng.dirichlet(np.ones(2))

    def perturb_outside(self, agents, keep, anchor, rng):
        out = agents.copy()
        for j in range(self.num_agents):
            if j not in keep:
                out[j, 2] = rng.choice(np.array([-1.0, 1.0]))
        return out


class ParticleEnv(Environment):
    """
    Particles in a [-box, box]^2 activity space. State row starts with [x, y];
    action is a velocity in [-1, 1]^2 clipped to norm 1; one step displaces by
    epsilon * velocity and clamps to the box.
    """

    action_dim = 2
    extra_dims = 0

    def __init__(self, cfg):
        super().__init__(cfg)
        self.box = cfg.box
        self.furniture_count = (cfg.furniture_count if cfg.furniture_count is not None
                                else max(1, cfg.num_agents // 2))
        self.state_dim = 2 + self.extra_dims
        self.obs_dim = self.state_dim + 3

    def _graph_config(self):
        if self.cfg.epsilon > self.cfg.d:
            raise ValueError(f"epsilon={self.cfg.epsilon} exceeds the neighbor radius d={self.cfg.d}")
        return proximity.GraphConfig(d=self.cfg.d, epsilon=self.cfg.epsilon,
                                     metric=proximity.EUCLIDEAN, position_dims=2)

    def _extras(self, rng):
        return np.zeros((self.num_agents, 0))

    def reset(self, seed):
        rng = _generator(seed)
        positions = rng.uniform(-self.box, self.box, size=(self.num_agents, 2))
        furniture = rng.uniform(-self.box, self.box, size=(self.furniture_count, 2))
        return World(np.hstack([positions, self._extras(rng)]), furniture)

    def _nearest_furniture(self, position, furniture):
        """(distance, offset) to the nearest furniture within d, or (None, None)."""
        if len(furniture) == 0:
            return None, None
        offsets = furniture - position[:2]
        dist = np.sqrt(np.sum(offsets * offsets, axis=1))
        k = int(np.argmin(dist))
        if dist[k] > self.graph.d + proximity.DISTANCE_SLACK:
            return None, None
        return float(dist[k]), offsets[k]

    def observe(self, state, furniture):
        state = np.asarray(state, dtype=np.float64)
        dist, offset = self._nearest_furniture(state, furniture)
        seen = np.zeros(3) if dist is None else np.array([offset[0], offset[1], 1.0])
        return np.concatenate([self._observed_state(state), seen])

    def _observed_state(self, state):
        return state

    def validate_action(self, action):
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (2,) or not np.all(np.isfinite(a)) or np.any(np.abs(a) > 1.0 + _ACTION_TOLERANCE):
            raise ValueError(f"velocity action must lie in [-1, 1]^2, got {action!r}")
        norm = math.sqrt(float(a @ a))
        return a / norm if norm > 1.0 else a

    def _move(self, state, action):
        velocity = self.validate_action(action)
        return np.clip(np.asarray(state[:2], dtype=np.float64) + self.graph.epsilon * velocity,
                       -self.box, self.box)

    def _forage(self, position, furniture):
        """-distance to the nearest visible pellet (capped at d), plus the pickup bonus."""
        dist, _ = self._nearest_furniture(position, furniture)
        if dist is None:
            return -self.graph.d
        bonus = PICKUP_BONUS if dist <= PICKUP_RADIUS + proximity.DISTANCE_SLACK else 0.0
        return -dist + bonus

    def _collides(self, i, intended):
        own = intended[i]
        return any(
            np.linalg.norm(own - pos) <= COLLISION_RADIUS + proximity.DISTANCE_SLACK
            for j, pos in intended.items() if j != i
        )

    def _clip(self, r):
        if abs(r) > self.reward_bound:
            logger.debug(f"{self.kind}: reward {r:.6g} clipped to the bound {self.reward_bound}")
        return float(np.clip(r, -self.reward_bound, self.reward_bound))

    def transition_agent(self, i, local, action, rng):
        if i not in local:
            raise ValueError(f"agent {i} must be part of its own neighborhood")
        state = np.array(local[i], dtype=np.float64)
        state[:2] = self._move(state, action)
        return state

    def explore(self, action, sigma, rng):
        return np.clip(np.asarray(action, dtype=np.float64) + rng.normal(0.0, sigma, size=2), -1.0, 1.0)

    def random_action(self, rng):
        return rng.uniform(-1.0, 1.0, size=2)

    def perturb_outside(self, agents, keep, anchor, rng):
        out = agents.copy()
        center = agents[anchor, :2]
        for j in range(self.num_agents):
            if j in keep:
                continue
            candidate = rng.uniform(-self.box, self.box, size=2)
            if np.linalg.norm(candidate - center) > self.graph.d + 1e-6:
                out[j, :2] = candidate
            out[j, 2:] = self._perturbed_extras(agents[j, 2:], rng)
        return out

    def _perturbed_extras(self, current, rng):
        return current

    def _pickers(self, agents):
        return range(self.num_agents)

    def _update_furniture(self, agents, furniture, rng):
        furniture = furniture.copy()
        pickers = list(self._pickers(agents))
        if not pickers or len(furniture) == 0:
            return furniture
        positions = agents[pickers, :2]
        for k in range(len(furniture)):
            gaps = np.sqrt(np.sum((positions - furniture[k]) ** 2, axis=1))
            if np.any(gaps <= PICKUP_RADIUS + proximity.DISTANCE_SLACK):
                furniture[k] = rng.uniform(-self.box, self.box, size=2)
        return furniture


class FoodCollectionEnv(ParticleEnv):
    """Cooperative foraging; pellets respawn uniformly once picked up."""

    kind = FOOD_COLLECTION

    def reward(self, i, local_states, local_actions, furniture):
        self._check_local(i, local_states, local_actions)
        intended = {j: self._move(local_states[j], local_actions[j]) for j in local_states}
        r = self._forage(intended[i], furniture)
        if self._collides(i, intended):
            r -= COLLISION_PENALTY
        return self._clip(r)


class _TeamEnv(ParticleEnv):
    """Particle scenario whose last floor(M/2) agents form the adversary team."""

    def __init__(self, cfg):
        if cfg.num_agents < 2:
            raise ValueError(f"{cfg.kind} needs at least two agents")
        super().__init__(cfg)
        self.adversary_count = (cfg.adversary_count if cfg.adversary_count is not None
                                else cfg.num_agents // 2)
        if not 1 <= self.adversary_count < cfg.num_agents:
            raise ValueError("adversary count must leave at least one agent on each team")

    def team_of(self, i):
        return ADVERSARY_TEAM if i >= self.num_agents - self.adversary_count else GOOD_TEAM

    def _teams(self):
        return np.array([self.team_of(i) for i in range(self.num_agents)])

    def _within_half_d(self, a, b):
        return np.linalg.norm(np.asarray(a[:2]) - np.asarray(b[:2])) <= self.graph.d / 2 + proximity.DISTANCE_SLACK


class GrasslandEnv(_TeamEnv):
    """
    Good agents forage grass; adversaries tag good one-hop neighbors within d/2,
    freezing them for FREEZE_STEPS steps. State row: [x, y, team, frozen].
    """

    kind = GRASSLAND
    extra_dims = 2

    def _extras(self, rng):
        return np.column_stack([self._teams(), np.zeros(self.num_agents)])

    def sample_world(self, rng):
        world = self.reset(rng)
        good = world.agents[:, 2] == GOOD_TEAM
        world.agents[good, 3] = rng.integers(0, FREEZE_STEPS + 1, size=int(good.sum()))
        return world

    def _perturbed_extras(self, current, rng):
        return np.array([current[0], float(rng.integers(0, FREEZE_STEPS + 1)) if current[0] == GOOD_TEAM else 0.0])

    def _observed_state(self, state):
        scaled = state.copy()
        scaled[3] = state[3] / FREEZE_STEPS
        return scaled

    def _tagged(self, i, local_states):
        own = local_states[i]
        return any(
            local_states[j][2] == ADVERSARY_TEAM and self._within_half_d(own, local_states[j])
            for j in local_states if j != i
        )

    def reward(self, i, local_states, local_actions, furniture):
        self._check_local(i, local_states, local_actions)
        own = local_states[i]
        if own[2] == GOOD_TEAM:
            if own[3] > 0:
                return self._clip(-FROZEN_PENALTY)
            intended = {j: self._move(local_states[j], local_actions[j]) for j in local_states}
            r = self._forage(intended[i], furniture)
            if self._collides(i, intended):
                r -= COLLISION_PENALTY
            return self._clip(r)
        prey = [
            local_states[j] for j in local_states
            if j != i and local_states[j][2] == GOOD_TEAM and local_states[j][3] == 0
        ]
        if any(self._within_half_d(own, p) for p in prey):
            return self._clip(TAG_BONUS)
        gaps = [float(np.linalg.norm(own[:2] - p[:2])) for p in prey]
        return self._clip(-min(gaps + [self.graph.d]))

    def transition_agent(self, i, local, action, rng):
        if i not in local:
            raise ValueError(f"agent {i} must be part of its own neighborhood")
        state = np.array(local[i], dtype=np.float64)
        self.validate_action(action)
        if state[2] == GOOD_TEAM:
            if state[3] > 0:
                state[3] -= 1.0
                return state
            if self._tagged(i, local):
                state[3] = float(FREEZE_STEPS)
                return state
        state[:2] = self._move(state, action)
        return state

    def _pickers(self, agents):
        return [j for j in range(self.num_agents) if agents[j, 2] == GOOD_TEAM and agents[j, 3] == 0]


class AdversarialBattleEnv(_TeamEnv):
    """
    Two teams capture resources; an agent within d/2 of two or more opponents
    is killed and respawns within epsilon of where it fell. State row: [x, y, team].
    """

    kind = ADVERSARIAL_BATTLE
    extra_dims = 1

    def _extras(self, rng):
        return self._teams()[:, None]

    def _killers(self, v, local_states):
        own = local_states[v]
        return [
            j for j in local_states
            if local_states[j][2] != own[2] and self._within_half_d(own, local_states[j])
        ]

    def _captures(self, position, furniture):
        dist, _ = self._nearest_furniture(position, furniture)
        return dist is not None and dist <= PICKUP_RADIUS + proximity.DISTANCE_SLACK

    def reward(self, i, local_states, local_actions, furniture):
        self._check_local(i, local_states, local_actions)
        own = local_states[i]
        intended = {j: self._move(local_states[j], local_actions[j]) for j in local_states}
        dist, _ = self._nearest_furniture(intended[i], furniture)
        r = -(self.graph.d if dist is None else dist)
        if self._captures(intended[i], furniture):
            r += CAPTURE_REWARD
        if any(local_states[j][2] != own[2] and self._captures(intended[j], furniture)
               for j in local_states if j != i):
            r -= CAPTURE_REWARD
        if len(self._killers(i, local_states)) >= 2:
            r -= KILL_PENALTY
        credit = 0.0
        for v in local_states:
            if v == i or local_states[v][2] == own[2] or not self._within_half_d(own, local_states[v]):
                continue
            killers = self._killers(v, local_states)
            if len(killers) >= 2:
                credit += KILL_BONUS / len(killers)
        r += min(credit, KILL_BONUS)
        return self._clip(r)

    def transition_agent(self, i, local, action, rng):
        if i not in local:
            raise ValueError(f"agent {i} must be part of its own neighborhood")
        state = np.array(local[i], dtype=np.float64)
        if len(self._killers(i, local)) >= 2:
            self.validate_action(action)
            angle = rng.uniform(0.0, 2.0 * math.pi)
            radius = self.graph.epsilon * math.sqrt(rng.uniform(0.0, 1.0))
            jump = radius * np.array([math.cos(angle), math.sin(angle)])
            state[:2] = np.clip(state[:2] + jump, -self.box, self.box)
            return state
        state[:2] = self._move(state, action)
        return state


_ENV_CLASSES = {
    ISING: IsingEnv,
    FOOD_COLLECTION: FoodCollectionEnv,
    GRASSLAND: GrasslandEnv,
    ADVERSARIAL_BATTLE: AdversarialBattleEnv,
}


def make_env(cfg: EnvConfig) -> Environment:
    return _ENV_CLASSES[cfg.kind](cfg)


def rollout(env, policies, seed, episodes):
    """
    Total team reward of each evaluation episode (greedy actions, all agents
    transition every step). Episodes start from the seeded ``reset``.
    """
    if len(policies) != env.num_agents:
        raise ValueError(f"{len(policies)} policies for {env.num_agents} agents")
    totals = []
    for episode in range(episodes):
        rng = stream(seed, "episode", episode)
        world = env.reset(rng)
        total = 0.0
        for _ in range(env.episode_length):
            actions = env.act(world, policies, greedy=True)
            outcome = env.step(world, actions, rng)
            total += float(outcome.rewards.sum())
            world = outcome.world
        totals.append(total)
    return totals


@dataclass
class ConformanceReport:
    kind: str
    probes: int
    reward_locality: int = 0
    transition_locality: int = 0
    reward_bound: int = 0
    motion: int = 0

    @property
    def violations(self):
        return self.reward_locality + self.transition_locality + self.reward_bound + self.motion


def conformance_probe(env, probes, seed):
    """
    Randomized checks that rewards and transitions ignore everything outside the
    one-hop neighborhood, rewards stay within the bound, and motion stays within
    epsilon. Returns violation counts per property.
    """
    rng = stream(seed, "conformance", env.kind)
    report = ConformanceReport(env.kind, probes)
    for _ in range(probes):
        world = env.sample_world(rng)
        actions = np.array([env.random_action(rng) for _ in range(env.num_agents)])
        i = int(rng.integers(env.num_agents))
        members = proximity.one_hop_neighbors(world.agents, env.graph, i)
        local = {j: world.agents[j] for j in members}
        r = env.reward(i, local, {j: actions[j] for j in members}, world.furniture)
        if abs(r) > env.reward_bound + proximity.DISTANCE_SLACK:
            report.reward_bound += 1

        perturbed = env.perturb_outside(world.agents, set(members), i, rng)
        other_actions = actions.copy()
        for j in range(env.num_agents):
            if j not in members:
                other_actions[j] = env.random_action(rng)
        members_after = proximity.one_hop_neighbors(perturbed, env.graph, i)
        local_after = {j: perturbed[j] for j in members_after}
        r_after = env.reward(i, local_after, {j: other_actions[j] for j in members_after}, world.furniture)
        if members_after != members or r_after != r:
            report.reward_locality += 1

        transition_seed = int(rng.integers(0, 2**32 - 1))
        moved = env.transition_agent(i, local, actions[i], np.random.default_rng(transition_seed))
        moved_after = env.transition_agent(i, local_after, actions[i], np.random.default_rng(transition_seed))
        if not np.array_equal(moved, moved_after):
            report.transition_locality += 1
        if not proximity.validate_motion(world.agents[i], moved, env.graph):
            report.motion += 1
    return report
