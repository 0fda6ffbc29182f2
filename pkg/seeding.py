"""
Seed derivation for reproducible training runs.

Every random stream in a run is derived from the single master seed in the run
config plus a salt describing who consumes it, e.g.::

    stream(seed, agent_id, iteration, "collect")

The derivation is a sha256 over the joined string, so it is stable across
Python versions, processes and machines (no reliance on ``hash()``).
"""

import hashlib

import numpy as np

SEED_MODULUS = 2**32 - 1


def derive_seed(master, *salt):
    """Derive an isolated, reproducible sub-seed from a master seed and a salt."""
    combined = "-".join(str(part) for part in (master, *salt))
    return int(hashlib.sha256(combined.encode("utf-8")).hexdigest(), 16) % SEED_MODULUS


def stream(master, *salt):
    """numpy Generator for the stream named by ``salt``."""
    return np.random.default_rng(derive_seed(master, *salt))
