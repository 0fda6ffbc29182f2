"""
Proximity graph over agent states.

Agents are the vertices of a d-disk proximity graph: two agents are connected
when the distance between their states is at most ``d``. From the graph we read
each agent's one-hop neighborhood (agents within ``d``, plus itself) and its
potential neighborhood (agents within ``d + 2*epsilon``), which contains every
agent that can be a one-hop neighbor after one step of bounded motion.

The metric must be a true metric (triangle inequality); both supported ones are:

- ``euclidean``: L2 distance over the positional coordinates
- ``lattice``: L1 distance over integer grid coordinates, optionally wrapped on
  a torus of side ``lattice_side``

Only the first ``position_dims`` columns of a state take part in the distance;
the remaining columns carry non-spatial state (spins, team flags, counters).
"""

import itertools
import logging
import math
import operator
from dataclasses import dataclass
from typing import Mapping, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

EUCLIDEAN = "euclidean"
LATTICE = "lattice"
METRICS = (EUCLIDEAN, LATTICE)

# Boundary distances count as neighbors; the slack absorbs float rounding.
DISTANCE_SLACK = 1e-12

# Above this team size, euclidean queries go through the uniform-grid hash.
SPATIAL_HASH_THRESHOLD = 32


@dataclass(frozen=True)
class GraphConfig:
    d: float
    epsilon: float = 0.0
    metric: str = EUCLIDEAN
    position_dims: Optional[int] = None
    lattice_side: Optional[int] = None

    def __post_init__(self):
        if not (math.isfinite(self.d) and self.d > 0):
            raise ValueError(f"neighbor radius d must be > 0, got {self.d}")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError(f"motion bound epsilon must be >= 0, got {self.epsilon}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}, expected one of {METRICS}")
        if self.position_dims is not None and self.position_dims < 1:
            raise ValueError("position_dims must be >= 1")
        if self.lattice_side is not None and self.lattice_side < 1:
            raise ValueError("lattice_side must be >= 1")

    @property
    def potential_radius(self):
        return self.d + 2.0 * self.epsilon


@dataclass(frozen=True)
class NeighborSets:
    one_hop: Tuple[int, ...]
    potential: Tuple[int, ...]


def _as_joint(states):
    joint = np.asarray(states, dtype=np.float64)
    if joint.ndim != 2:
        raise ValueError(f"joint state must be a 2-D (agents x dims) array, got shape {joint.shape}")
    if not np.all(np.isfinite(joint)):
        raise ValueError("joint state contains non-finite components")
    return joint


def _agent_index(i, num_agents):
    try:
        index = operator.index(i)
    except TypeError:
        raise ValueError(f"agent id must be an integer, got {i!r}") from None
    if not 0 <= index < num_agents:
        raise ValueError(f"invalid agent id {index} for a team of {num_agents}")
    return index


def positions_of(states, cfg):
    if cfg.position_dims is None:
        return states
    if states.shape[-1] < cfg.position_dims:
        raise ValueError(
            f"state dimension {states.shape[-1]} is smaller than position_dims={cfg.position_dims}"
        )
    return states[..., : cfg.position_dims]


def metric_norm(diff, cfg):
    """Distance along the last axis of a coordinate difference array."""
    if cfg.metric == EUCLIDEAN:
        return np.sqrt(np.sum(diff * diff, axis=-1))
    gaps = np.abs(diff)
    if cfg.lattice_side is not None:
        gaps = np.minimum(gaps, cfg.lattice_side - gaps)
    return np.sum(gaps, axis=-1)


def distance(a, b, cfg):
    """Distance between two agent states under ``cfg``'s metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch between states {a.shape} and {b.shape}")
    return float(metric_norm(positions_of(b, cfg) - positions_of(a, cfg), cfg))


def pairwise_distances(states, cfg):
    """M x M distance matrix for a joint state."""
    positions = positions_of(_as_joint(states), cfg)
    return metric_norm(positions[:, None, :] - positions[None, :, :], cfg)


class SpatialHash:
    """
    Uniform-grid hash over agent positions for radius queries.

    Cells are slightly wider than the query radius, so every agent within the
    radius of a point sits in the point's cell or one of its adjacent cells.
    """

    def __init__(self, positions, radius):
        self.positions = np.asarray(positions, dtype=np.float64)
        self.radius = float(radius)
        self.cell = self.radius * (1.0 + 1e-9) + 4 * DISTANCE_SLACK
        self.cells = {}
        for index, key in enumerate(self._keys(self.positions)):
            self.cells.setdefault(key, []).append(index)

    def _keys(self, points):
        return [tuple(row) for row in np.floor(points / self.cell).astype(np.int64).tolist()]

    def candidates(self, point):
        base = self._keys(np.asarray(point, dtype=np.float64)[None, :])[0]
        found = []
        for offset in itertools.product((-1, 0, 1), repeat=len(base)):
            key = tuple(c + o for c, o in zip(base, offset))
            found.extend(self.cells.get(key, ()))
        return np.array(sorted(found), dtype=np.int64)

    def query(self, point):
        """Indices within ``radius`` of ``point`` (slack included), ascending."""
        candidates = self.candidates(point)
        if candidates.size == 0:
            return candidates
        diff = self.positions[candidates] - np.asarray(point, dtype=np.float64)
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        return candidates[dist <= self.radius + DISTANCE_SLACK]


def _within(states, cfg, i, radius):
    joint = _as_joint(states)
    index = _agent_index(i, joint.shape[0])
    positions = positions_of(joint, cfg)
    if cfg.metric == EUCLIDEAN and joint.shape[0] > SPATIAL_HASH_THRESHOLD:
        hits = SpatialHash(positions, radius).query(positions[index])
    else:
        dist = metric_norm(positions - positions[index], cfg)
        hits = np.flatnonzero(dist <= radius + DISTANCE_SLACK)
    members = set(int(j) for j in hits)
    members.add(index)
    return tuple(sorted(members))


def one_hop_neighbors(states, cfg, i):
    """Agents within distance ``d`` of agent ``i``, plus ``i``, ascending by id."""
    return _within(states, cfg, i, cfg.d)


def potential_neighbors(states, cfg, i):
    """Agents within ``d + 2*epsilon`` of agent ``i`` (including ``i``), ascending."""
    return _within(states, cfg, i, cfg.potential_radius)


def neighbor_sets(states, cfg, i):
    return NeighborSets(
        one_hop=one_hop_neighbors(states, cfg, i),
        potential=potential_neighbors(states, cfg, i),
    )


def all_one_hop_neighbors(states, cfg):
    """One-hop neighborhood of every agent, indexed by agent id."""
    joint = _as_joint(states)
    if cfg.metric == EUCLIDEAN and joint.shape[0] > SPATIAL_HASH_THRESHOLD:
        positions = positions_of(joint, cfg)
        grid = SpatialHash(positions, cfg.d)
        return [
            tuple(sorted(set(int(j) for j in grid.query(positions[i])) | {i}))
            for i in range(joint.shape[0])
        ]
    close = pairwise_distances(joint, cfg) <= cfg.d + DISTANCE_SLACK
    np.fill_diagonal(close, True)
    return [tuple(int(j) for j in np.flatnonzero(row)) for row in close]


def neighbors_among(states_by_id: Mapping[int, np.ndarray], cfg, i, radius=None):
    """
    Neighbors of ``i`` restricted to the agents present in ``states_by_id``.

    Used when only a subset of the team has been simulated forward; the caller
    is responsible for the subset containing every agent that can qualify.
    """
    if i not in states_by_id:
        raise ValueError(f"agent {i} is not among the supplied states")
    radius = cfg.d if radius is None else radius
    ids = sorted(states_by_id)
    rows = np.stack([np.asarray(states_by_id[j], dtype=np.float64) for j in ids])
    if not np.all(np.isfinite(rows)):
        raise ValueError("states contain non-finite components")
    positions = positions_of(rows, cfg)
    origin = positions[ids.index(i)]
    dist = metric_norm(positions - origin, cfg)
    return tuple(j for j, gap in zip(ids, dist) if gap <= radius + DISTANCE_SLACK)


def validate_motion(prev, next_state, cfg):
    """True iff one step moved the agent by at most ``epsilon``."""
    return distance(prev, next_state, cfg) <= cfg.epsilon + DISTANCE_SLACK
