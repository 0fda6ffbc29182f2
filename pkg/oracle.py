"""
Brute-force checks of the mathematical guarantees behind neighborhood training.

- exact tabular Q evaluation and value iteration on small joint MDPs
- truncated (neighborhood-averaged) Q tables and the worst-case truncation gap
  against the bound 2 * r_bar * gamma / (1 - gamma)
- scans of motion trajectories for agents that become one-hop neighbors
  without having been potential neighbors one step earlier
- finite-difference checks of the critic and actor gradients

run_oracle_suite bundles all of them (plus the environment conformance probes)
into CheckResults for the ``verify`` command.
"""

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

import proximity
from envs import PARTICLE_KINDS, EnvConfig, conformance_probe, make_env
from learner import actor_gradient, critic_gradient
from neural_net import LINEAR, SOFTMAX, TANH, PadSpec, init_mlp, mlp_forward
from seeding import stream

logger = logging.getLogger(__name__)

STOCHASTIC_TOLERANCE = 1e-9
FIXED_POINT_TOLERANCE = 1e-10
MAX_SWEEPS = 1_000_000
GRADIENT_TOLERANCE = 1e-4
FD_STEP = 1e-5

# (d, epsilon) pairs of the particle scenarios, smallest to largest team
MOTION_TIERS = ((0.15, 0.05), (0.20, 0.10), (0.25, 0.15), (0.30, 0.20), (0.35, 0.25))


def _digits(base, count):
    """All tuples over range(base)^count in mixed-radix order (first coordinate most significant)."""
    return np.array(list(itertools.product(range(base), repeat=count)), dtype=np.int64).reshape(-1, count)


def line_neighbors(agents):
    return [tuple(j for j in (i - 1, i, i + 1) if 0 <= j < agents) for i in range(agents)]


@dataclass
class TabularMdp:
    """
    Joint MDP over ``n_agents`` agents with per-agent finite state/action sets.

    ``transitions[s, a, s']`` is the joint transition table and ``rewards[i, s, a]``
    agent i's reward; joint indices are mixed-radix over agents.
    """

    n_agents: int
    n_states: int
    n_actions: int
    gamma: float
    r_bar: float
    transitions: np.ndarray
    rewards: np.ndarray
    neighbors: List[Tuple[int, ...]] = None

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        n_s, n_a = self.joint_states, self.joint_actions
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.transitions.shape != (n_s, n_a, n_s):
            raise ValueError(f"transition table shape {self.transitions.shape}, expected {(n_s, n_a, n_s)}")
        if self.rewards.shape != (self.n_agents, n_s, n_a):
            raise ValueError(f"reward table shape {self.rewards.shape}, expected {(self.n_agents, n_s, n_a)}")
        if np.any(self.transitions < 0) or np.max(np.abs(self.transitions.sum(axis=2) - 1.0)) > STOCHASTIC_TOLERANCE:
            raise ValueError("transition rows must be probability distributions")
        if np.max(np.abs(self.rewards)) > self.r_bar + 1e-12:
            raise ValueError(f"rewards exceed the bound r_bar={self.r_bar}")
        if self.neighbors is None:
            self.neighbors = [tuple(range(self.n_agents))] * self.n_agents
        self.state_digits = _digits(self.n_states, self.n_agents)
        self.action_digits = _digits(self.n_actions, self.n_agents)

    @property
    def joint_states(self):
        return self.n_states ** self.n_agents

    @property
    def joint_actions(self):
        return self.n_actions ** self.n_agents


def _local_index(digits, members, base):
    if not members:
        return np.zeros(len(digits), dtype=np.int64)
    return np.ravel_multi_index(tuple(digits[:, j] for j in members), (base,) * len(members))


def random_tabular_mdp(rng, agents=3, states=3, actions=2, gamma=0.9, r_bar=1.0):
    """
    Random MDP on a line graph: agent i's next-state distribution depends on
    the states of its line neighbors and its own action, and its reward on the
    states and actions of its line neighbors. The joint transition table is the
    product of the per-agent tables.
    """
    neighbors = line_neighbors(agents)
    s_digits = _digits(states, agents)
    a_digits = _digits(actions, agents)
    n_s, n_a = len(s_digits), len(a_digits)
    transitions = np.ones((n_s, n_a, n_s))
    rewards = np.zeros((agents, n_s, n_a))
    for i, members in enumerate(neighbors):
        local_s = _local_index(s_digits, members, states)
        local_a = _local_index(a_digits, members, actions)
        table = rng.dirichlet(np.ones(states), size=(states ** len(members), actions))
        own_next = table[local_s][:, a_digits[:, i], :]
        transitions *= own_next[:, :, s_digits[:, i]]
        reward_table = rng.uniform(-r_bar, r_bar, size=(states ** len(members), actions ** len(members)))
        rewards[i] = reward_table[local_s][:, local_a]
    transitions /= transitions.sum(axis=2, keepdims=True)
    return TabularMdp(agents, states, actions, gamma, r_bar, transitions, rewards, neighbors)


def uniform_policy(mdp):
    return np.full((mdp.joint_states, mdp.joint_actions), 1.0 / mdp.joint_actions)


def product_policy(mdp, local_policies):
    """Joint policy from per-agent tables ``local_policies[i][s_i, a_i]``."""
    joint = np.ones((mdp.joint_states, mdp.joint_actions))
    for i, table in enumerate(local_policies):
        table = np.asarray(table, dtype=np.float64)
        if table.shape != (mdp.n_states, mdp.n_actions):
            raise ValueError(f"agent {i}: local policy shape {table.shape}")
        joint *= table[mdp.state_digits[:, i]][:, mdp.action_digits[:, i]]
    return joint


def random_product_policy(mdp, rng):
    return product_policy(mdp, [rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
                                for _ in range(mdp.n_agents)])


@dataclass
class ExactQ:
    mdp: TabularMdp
    policy: np.ndarray
    table: np.ndarray
    sweeps: int


def _check_policy(mdp, policy):
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.joint_states, mdp.joint_actions):
        raise ValueError(f"policy shape {policy.shape}, expected {(mdp.joint_states, mdp.joint_actions)}")
    if np.any(policy < 0) or np.max(np.abs(policy.sum(axis=1) - 1.0)) > STOCHASTIC_TOLERANCE:
        raise ValueError("policy rows must be probability distributions")
    return policy


def exact_q(mdp, policy, tolerance=FIXED_POINT_TOLERANCE) -> ExactQ:
    """Every agent's Q table under ``policy``, by fixed-point iteration to a sup-norm residual <= tolerance."""
    policy = _check_policy(mdp, policy)
    q = mdp.rewards.copy()
    for sweep in range(1, MAX_SWEEPS + 1):
        values = np.sum(policy[None, :, :] * q, axis=2)
        updated = mdp.rewards + mdp.gamma * np.einsum("sat,nt->nsa", mdp.transitions, values)
        residual = float(np.max(np.abs(updated - q)))
        q = updated
        if residual <= tolerance:
            return ExactQ(mdp, policy, q, sweep)
    raise RuntimeError(f"Q evaluation did not reach {tolerance} in {MAX_SWEEPS} sweeps")


def bellman_residual(exact: ExactQ):
    mdp = exact.mdp
    values = np.sum(exact.policy[None, :, :] * exact.table, axis=2)
    backup = mdp.rewards + mdp.gamma * np.einsum("sat,nt->nsa", mdp.transitions, values)
    return float(np.max(np.abs(backup - exact.table)))


def value_iteration(mdp, tolerance=FIXED_POINT_TOLERANCE):
    """Optimal team Q table and its greedy joint policy (ties go to the lowest joint action index)."""
    team = mdp.rewards.sum(axis=0)
    q = team.copy()
    for _ in range(MAX_SWEEPS):
        updated = team + mdp.gamma * mdp.transitions @ q.max(axis=1)
        residual = float(np.max(np.abs(updated - q)))
        q = updated
        if residual <= tolerance:
            break
    else:
        raise RuntimeError(f"value iteration did not reach {tolerance} in {MAX_SWEEPS} sweeps")
    best = q.max(axis=1, keepdims=True)
    greedy = np.argmax(q >= best - 1e-12, axis=1)
    return q, greedy


def deterministic_policy(mdp, choice):
    policy = np.zeros((mdp.joint_states, mdp.joint_actions))
    policy[np.arange(mdp.joint_states), np.asarray(choice)] = 1.0
    return policy


def _split_axes(mdp, i):
    members = list(mdp.neighbors[i])
    excluded = [j for j in range(mdp.n_agents) if j not in members]
    return members, excluded


def _regroup(mdp, table, i):
    """Reshape a joint (s, a) table into (s_near, a_near, s_far, a_far)."""
    members, excluded = _split_axes(mdp, i)
    n = mdp.n_agents
    full = table.reshape((mdp.n_states,) * n + (mdp.n_actions,) * n)
    order = members + [n + j for j in members] + excluded + [n + j for j in excluded]
    shape = (mdp.n_states ** len(members), mdp.n_actions ** len(members),
             mdp.n_states ** len(excluded), mdp.n_actions ** len(excluded))
    return np.transpose(full, order).reshape(shape)


def truncated_q(exact: ExactQ, i, weights=None):
    """
    Agent i's Q averaged over the states and actions of agents outside its
    neighborhood. ``weights[s_near, a_near, s_far, a_far]`` must be a
    distribution over (s_far, a_far) for every (s_near, a_near); uniform by default.
    """
    mdp = exact.mdp
    grouped = _regroup(mdp, exact.table[i], i)
    if weights is None:
        weights = np.full(grouped.shape, 1.0 / (grouped.shape[2] * grouped.shape[3]))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != grouped.shape:
        raise ValueError(f"weights shape {weights.shape}, expected {grouped.shape}")
    if np.any(weights < 0) or np.max(np.abs(weights.sum(axis=(2, 3)) - 1.0)) > STOCHASTIC_TOLERANCE:
        raise ValueError("truncation weights must sum to 1 for every neighborhood state-action pair")
    return np.sum(weights * grouped, axis=(2, 3))


def truncation_gap(exact: ExactQ, i, weights=None):
    """max over joint (s, a) of |Q_trunc(s_near, a_near) - Q(s, a)|."""
    grouped = _regroup(exact.mdp, exact.table[i], i)
    approx = truncated_q(exact, i, weights)
    return float(np.max(np.abs(grouped - approx[:, :, None, None])))


def lemma1_bound(r_bar, gamma):
    """Worst-case truncation error 2 * r_bar * gamma / (1 - gamma)."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if not r_bar > 0:
        raise ValueError(f"reward bound must be > 0, got {r_bar}")
    return 2.0 * r_bar * gamma / (1.0 - gamma)


# -- motion scans ----------------------------------------------------------


@dataclass
class Prop1Report:
    steps: int = 0
    violations: int = 0
    motion_violations: int = 0
    examples: List[Tuple[int, int, int]] = field(default_factory=list)

    def merge(self, other):
        self.steps += other.steps
        self.violations += other.violations
        self.motion_violations += other.motion_violations
        self.examples.extend(other.examples[: max(0, 5 - len(self.examples))])
        return self


def prop1_violations(trajectory, cfg: proximity.GraphConfig, chunk=4096) -> Prop1Report:
    """
    Scan a (T+1, M, dim) trajectory for pairs (i, j) with j outside i's
    potential neighborhood at t but inside its one-hop neighborhood at t+1.
    Steps where an agent moved farther than epsilon are counted as motion
    violations, and pairs involving that agent are left out of the main count.
    """
    trajectory = np.asarray(trajectory, dtype=np.float64)
    if trajectory.ndim != 3:
        raise ValueError("trajectory must be a (steps+1, agents, dims) array")
    report = Prop1Report(steps=max(0, trajectory.shape[0] - 1))
    positions = proximity.positions_of(trajectory, cfg)
    for start in range(0, report.steps, chunk):
        stop = min(start + chunk, report.steps)
        now = positions[start:stop]
        nxt = positions[start + 1:stop + 1]
        moved = proximity.metric_norm(nxt - now, cfg) > cfg.epsilon + proximity.DISTANCE_SLACK
        report.motion_violations += int(moved.sum())
        dist_now = proximity.metric_norm(now[:, :, None, :] - now[:, None, :, :], cfg)
        dist_next = proximity.metric_norm(nxt[:, :, None, :] - nxt[:, None, :, :], cfg)
        conforming = ~(moved[:, :, None] | moved[:, None, :])
        bad = (dist_now > cfg.potential_radius + proximity.DISTANCE_SLACK) \
            & (dist_next <= cfg.d + proximity.DISTANCE_SLACK) & conforming
        count = int(bad.sum())
        if count:
            report.violations += count
            for t, i, j in np.argwhere(bad)[:5]:
                report.examples.append((int(start + t), int(i), int(j)))
    return report


def bounded_random_walk(rng, agents, steps, epsilon, box=1.0):
    """Agents take independent uniform steps in the epsilon-disk, clamped to [-box, box]^2."""
    trajectory = np.empty((steps + 1, agents, 2))
    trajectory[0] = rng.uniform(-box, box, size=(agents, 2))
    angles = rng.uniform(0.0, 2.0 * math.pi, size=(steps, agents))
    radii = epsilon * np.sqrt(rng.uniform(0.0, 1.0, size=(steps, agents)))
    jumps = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=-1)
    for t in range(steps):
        trajectory[t + 1] = np.clip(trajectory[t] + jumps[t], -box, box)
    return trajectory


def inject_teleport(trajectory, step, agent, offset):
    """Copy of ``trajectory`` where ``agent`` jumps by ``offset`` at ``step`` and stays displaced."""
    faulty = np.array(trajectory, dtype=np.float64, copy=True)
    faulty[step + 1:, agent, :len(offset)] += np.asarray(offset, dtype=np.float64)
    return faulty


def env_walk(env, rng, steps):
    """Agent-state trajectory of a full-environment rollout under uniformly random actions."""
    world = env.reset(rng)
    trajectory = [world.agents.copy()]
    for _ in range(steps):
        actions = np.array([env.random_action(rng) for _ in range(env.num_agents)])
        world = env.step(world, actions, rng).world
        trajectory.append(world.agents.copy())
    return np.stack(trajectory)


# -- gradient fidelity -----------------------------------------------------


@dataclass
class FidelityReport:
    configs: int
    max_critic_error: float
    max_actor_error: float


def _relative_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _flat(params):
    return np.concatenate([a.ravel() for a in params.arrays()])


def _unflat(params, vector):
    arrays, offset = [], 0
    for a in params.arrays():
        arrays.append(vector[offset:offset + a.size].reshape(a.shape))
        offset += a.size
    return params.with_arrays(arrays)


def numeric_gradient(objective, params, step=FD_STEP):
    base = _flat(params)
    grad = np.zeros_like(base)
    for k in range(base.size):
        up, down = base.copy(), base.copy()
        up[k] += step
        down[k] -= step
        grad[k] = (objective(_unflat(params, up)) - objective(_unflat(params, down))) / (2.0 * step)
    return grad


def gradient_fidelity(configs=50, seed=0) -> FidelityReport:
    """Compare critic and actor gradients with central finite differences on random small networks."""
    rng = stream(seed, "gradient-fidelity")
    worst_critic = worst_actor = 0.0
    for _ in range(configs):
        slots = int(rng.integers(1, 4))
        state_dim = int(rng.integers(1, 4))
        action_dim = int(rng.integers(1, 3))
        head = (TANH, SOFTMAX)[int(rng.integers(2))]
        hidden = [int(rng.integers(3, 9)) for _ in range(int(rng.integers(1, 3)))]
        spec = PadSpec(slots, state_dim, action_dim)
        batch = int(rng.integers(1, 6))
        critic = init_mlp([spec.critic_length] + hidden + [1], LINEAR, rng)
        policy = init_mlp([spec.policy_length] + hidden + [action_dim], head, rng)
        critic_inputs = rng.normal(size=(batch, spec.critic_length))
        policy_inputs = rng.normal(size=(batch, spec.policy_length))
        targets = rng.normal(size=batch)
        cut = spec.action_slice(0)

        _, grads = critic_gradient(critic, critic_inputs, targets)
        numeric = numeric_gradient(lambda c: critic_gradient(c, critic_inputs, targets)[0], critic)
        worst_critic = max(worst_critic, _relative_error(_flat(grads), numeric))

        def actor_objective(p):
            acts, _ = mlp_forward(p, policy_inputs)
            x = critic_inputs.copy()
            x[:, cut] = acts
            q, _ = mlp_forward(critic, x)
            return -float(np.mean(q))

        grads, _ = actor_gradient(policy, critic, policy_inputs, critic_inputs, cut)
        worst_actor = max(worst_actor, _relative_error(_flat(grads), numeric_gradient(actor_objective, policy)))
    return FidelityReport(configs, worst_critic, worst_actor)


# -- suite -----------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    limit: float
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.measured = float(self.measured)
        self.limit = float(self.limit)


@dataclass
class SuiteSettings:
    seed: int = 0
    mdps: int = 20
    walk_steps: int = 100_000
    walk_agents: int = 6
    env_walk_steps: int = 2_000
    env_agents: int = 6
    probes: int = 2_000
    gradient_configs: int = 50


def check_lemma1(settings) -> List[CheckResult]:
    rng = stream(settings.seed, "lemma1")
    gammas = (0.5, 0.9, 0.95)
    worst_ratio = 0.0
    worst_residual = 0.0
    violations = 0
    for k in range(settings.mdps):
        gamma = gammas[k % len(gammas)]
        mdp = random_tabular_mdp(rng, agents=3, states=3, actions=2, gamma=gamma, r_bar=1.0)
        exact = exact_q(mdp, random_product_policy(mdp, rng))
        worst_residual = max(worst_residual, bellman_residual(exact))
        bound = lemma1_bound(mdp.r_bar, gamma)
        for i in range(mdp.n_agents):
            grouped_shape = _regroup(mdp, exact.table[i], i).shape
            random_weights = rng.dirichlet(np.ones(grouped_shape[2] * grouped_shape[3]),
                                           size=grouped_shape[:2]).reshape(grouped_shape)
            for weights in (None, random_weights):
                gap = truncation_gap(exact, i, weights)
                worst_ratio = max(worst_ratio, gap / bound)
                violations += int(gap > bound + 1e-9)
    return [
        CheckResult("truncation_bound", violations == 0, worst_ratio, 1.0,
                    f"{settings.mdps} random 3-agent MDPs, worst gap/bound ratio {worst_ratio:.4f}"),
        CheckResult("bellman_residual", worst_residual <= 1e-9, worst_residual, 1e-9,
                    "exact Q satisfies the Bellman equation"),
    ]


def check_motion(settings) -> List[CheckResult]:
    rng = stream(settings.seed, "prop1")
    results = []
    walk = Prop1Report()
    for d, epsilon in MOTION_TIERS:
        cfg = proximity.GraphConfig(d=d, epsilon=epsilon)
        trajectory = bounded_random_walk(rng, settings.walk_agents, settings.walk_steps, epsilon, box=1.0)
        walk.merge(prop1_violations(trajectory, cfg))
    results.append(CheckResult("potential_neighbors_random_walk", walk.violations == 0 and walk.motion_violations == 0,
                               walk.violations, 0, f"{walk.steps} steps over {len(MOTION_TIERS)} (d, eps) pairs"))

    envs_report = Prop1Report()
    for kind in PARTICLE_KINDS:
        for d, epsilon in MOTION_TIERS:
            env = make_env(EnvConfig(kind, settings.env_agents, d=d, epsilon=epsilon, box=1.0))
            envs_report.merge(prop1_violations(env_walk(env, rng, settings.env_walk_steps), env.graph))
    results.append(CheckResult("potential_neighbors_env_walk",
                               envs_report.violations == 0 and envs_report.motion_violations == 0,
                               envs_report.violations, 0, f"{envs_report.steps} environment steps"))

    cfg = proximity.GraphConfig(d=0.15, epsilon=0.05)
    clean = bounded_random_walk(rng, 6, 200, 0.05)
    faulty = prop1_violations(inject_teleport(clean, 100, 0, (0.5, 0.0)), cfg)
    results.append(CheckResult("teleport_detected", faulty.motion_violations > 0, faulty.motion_violations, 1,
                               "a jump larger than epsilon must be reported"))
    return results


def check_gradients(settings) -> List[CheckResult]:
    report = gradient_fidelity(settings.gradient_configs, settings.seed)
    return [
        CheckResult("critic_gradient", report.max_critic_error <= GRADIENT_TOLERANCE, report.max_critic_error,
                    GRADIENT_TOLERANCE, f"{report.configs} random networks"),
        CheckResult("actor_gradient", report.max_actor_error <= GRADIENT_TOLERANCE, report.max_actor_error,
                    GRADIENT_TOLERANCE, f"{report.configs} random networks"),
    ]


def check_conformance(settings) -> List[CheckResult]:
    results = []
    cases = [EnvConfig("ising", 9)] + [EnvConfig(kind, settings.env_agents) for kind in PARTICLE_KINDS]
    for env_cfg in cases:
        report = conformance_probe(make_env(env_cfg), settings.probes, settings.seed)
        results.append(CheckResult(
            f"conformance_{env_cfg.kind}", report.violations == 0, report.violations, 0,
            f"{report.probes} probes: reward locality {report.reward_locality}, transition locality "
            f"{report.transition_locality}, bound {report.reward_bound}, motion {report.motion}",
        ))
    return results


def run_oracle_suite(settings: Optional[SuiteSettings] = None) -> List[CheckResult]:
    settings = settings or SuiteSettings()
    results = []
    for check in (check_lemma1, check_motion, check_gradients, check_conformance):
        started = time.perf_counter()
        found = check(settings)
        logger.info(f"📊 {check.__name__} finished in {time.perf_counter() - started:.2f}s")
        results.extend(found)
    return results
