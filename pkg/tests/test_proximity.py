import numpy as np
import pytest

import proximity
from proximity import GraphConfig


def test_one_hop_includes_self_and_boundary():
    states = np.array([[0.0, 0.0], [0.15, 0.0], [0.4, 0.0]])
    cfg = GraphConfig(d=0.15, epsilon=0.05)
    assert proximity.one_hop_neighbors(states, cfg, 0) == (0, 1)
    assert proximity.one_hop_neighbors(states, cfg, 2) == (2,)


def test_potential_neighbors_use_widened_radius():
    states = np.array([[0.0, 0.0], [0.2, 0.0], [0.25, 0.0]])
    cfg = GraphConfig(d=0.15, epsilon=0.05)
    sets = proximity.neighbor_sets(states, cfg, 0)
    assert sets.one_hop == (0,)
    assert sets.potential == (0, 1, 2)


def test_potential_neighbors_exclude_beyond_widened_radius():
    states = np.array([[0.0, 0.0], [0.2, 0.0], [0.26, 0.0]])
    cfg = GraphConfig(d=0.15, epsilon=0.05)
    assert proximity.potential_neighbors(states, cfg, 0) == (0, 1)


def test_single_agent_is_its_own_neighborhood():
    cfg = GraphConfig(d=0.1)
    assert proximity.one_hop_neighbors(np.zeros((1, 2)), cfg, 0) == (0,)


def test_coincident_agents_are_neighbors():
    cfg = GraphConfig(d=0.1)
    assert proximity.one_hop_neighbors(np.zeros((3, 2)), cfg, 1) == (0, 1, 2)


@pytest.mark.parametrize("bad", [-1, 3, 1.5, "0"])
def test_invalid_agent_id_rejected(bad):
    with pytest.raises(ValueError):
        proximity.one_hop_neighbors(np.zeros((3, 2)), GraphConfig(d=0.1), bad)


def test_non_finite_state_rejected():
    states = np.array([[0.0, 0.0], [np.nan, 0.0]])
    with pytest.raises(ValueError):
        proximity.one_hop_neighbors(states, GraphConfig(d=0.1), 0)


def test_distance_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        proximity.distance([0.0, 0.0], [0.0, 0.0, 1.0], GraphConfig(d=0.1))


@pytest.mark.parametrize("kwargs", [{"d": 0.0}, {"d": 0.1, "epsilon": -0.1}, {"d": 0.1, "metric": "cosine"}])
def test_graph_config_validation(kwargs):
    with pytest.raises(ValueError):
        GraphConfig(**kwargs)


def test_lattice_metric_wraps_on_torus():
    cfg = GraphConfig(d=1.0, metric="lattice", position_dims=2, lattice_side=3)
    states = np.array([[0, 0, 1], [0, 2, -1], [1, 1, 1]], dtype=np.float64)
    assert proximity.distance(states[0], states[1], cfg) == 1.0
    assert proximity.one_hop_neighbors(states, cfg, 0) == (0, 1)


def test_position_dims_ignore_extra_columns():
    cfg = GraphConfig(d=0.1, position_dims=2)
    states = np.array([[0.0, 0.0, 0.0], [0.05, 0.0, 100.0]])
    assert proximity.one_hop_neighbors(states, cfg, 0) == (0, 1)


def test_spatial_hash_matches_brute_force():
    rng = np.random.default_rng(3)
    states = rng.uniform(-2.0, 2.0, size=(80, 2))
    cfg = GraphConfig(d=0.3, epsilon=0.1)
    close = proximity.pairwise_distances(states, cfg)
    for i in range(len(states)):
        expected = tuple(int(j) for j in np.flatnonzero(close[i] <= cfg.d + proximity.DISTANCE_SLACK))
        assert proximity.one_hop_neighbors(states, cfg, i) == expected
        wide = tuple(int(j) for j in np.flatnonzero(close[i] <= cfg.potential_radius + proximity.DISTANCE_SLACK))
        assert proximity.potential_neighbors(states, cfg, i) == wide
    assert proximity.all_one_hop_neighbors(states, cfg) == [
        proximity.one_hop_neighbors(states, cfg, i) for i in range(len(states))
    ]


def test_neighbors_stay_inside_potential_set_after_bounded_motion():
    rng = np.random.default_rng(11)
    cfg = GraphConfig(d=0.2, epsilon=0.1)
    states = rng.uniform(-1.0, 1.0, size=(12, 2))
    for _ in range(200):
        steps = rng.normal(size=states.shape)
        steps *= (cfg.epsilon * rng.uniform(size=(len(states), 1))) / np.linalg.norm(steps, axis=1, keepdims=True)
        moved = states + steps
        for i in range(len(states)):
            before = set(proximity.potential_neighbors(states, cfg, i))
            assert set(proximity.one_hop_neighbors(moved, cfg, i)) <= before
            assert proximity.validate_motion(states[i], moved[i], cfg)
        states = moved


def test_neighbors_among_restricts_to_subset():
    cfg = GraphConfig(d=0.15)
    subset = {2: np.array([0.0, 0.0]), 5: np.array([0.1, 0.0]), 7: np.array([0.5, 0.0])}
    assert proximity.neighbors_among(subset, cfg, 2) == (2, 5)
    with pytest.raises(ValueError):
        proximity.neighbors_among(subset, cfg, 3)


def test_validate_motion_flags_large_jump():
    cfg = GraphConfig(d=0.15, epsilon=0.05)
    assert not proximity.validate_motion([0.0, 0.0], [0.06, 0.0], cfg)
