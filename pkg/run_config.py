"""
Run configuration: key=value files resolved against the training defaults.

A config file holds one ``key=value`` pair per line; ``#`` starts a comment and
blank lines are skipped. Unknown keys are rejected. Keys missing from the file
take the defaults below; the neighbor radius, motion bound, activity box and
episode length of particle scenarios come from the tier table keyed by team
size (the smallest tier at or above M; the largest tier above that).
"""

import logging
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional, Tuple

from envs import ENV_KINDS, ISING, MIXED_KINDS, EnvConfig

logger = logging.getLogger(__name__)

ALGORITHMS = ("darl1n", "maddpg")
TRANSPORTS = ("inproc", "tcp")
ADVERSARY_MODES = ("frozen", "cotrain")

DEFAULT_OUTPUT_DIR = os.getenv("DARL1N_OUTPUT_DIR", "runs")

# Team size -> neighbor radius d, motion bound epsilon, activity box half-width
PARTICLE_TIERS = {
    3: {"d": 0.15, "epsilon": 0.05, "box": 1.0},
    6: {"d": 0.20, "epsilon": 0.10, "box": 1.5},
    12: {"d": 0.25, "epsilon": 0.15, "box": 2.0},
    24: {"d": 0.30, "epsilon": 0.20, "box": 2.5},
    48: {"d": 0.35, "epsilon": 0.25, "box": 3.0},
}

# Team size -> episode length for the mixed scenarios; the others use 25
MIXED_EPISODE_LENGTHS = {6: 25, 12: 30, 24: 35, 48: 40}
EPISODE_LENGTH = 25

BATCH_SIZES = {ISING: 32}
PARTICLE_BATCH_SIZE = 1024


class ConfigError(ValueError):
    """Unknown key, unparsable value or inconsistent combination."""


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "darl1n"
    env: str = ISING
    M: int = 9
    seed: int = 0
    gamma: float = 0.95
    lr: float = 0.01
    tau: float = 0.01
    buffer_size: int = 1_000_000
    batch_size: Optional[int] = None
    episode_length: Optional[int] = None
    max_transition_number: Optional[int] = None
    update_every: int = 1
    exploration_sigma: float = 0.1
    hidden_units: int = 64
    hidden_layers: int = 3
    d: Optional[float] = None
    epsilon: Optional[float] = None
    box: Optional[float] = None
    transport: str = "inproc"
    listen_host: str = "127.0.0.1"
    listen_port: int = 0
    max_iterations: int = 100
    eval_every: int = 1
    eval_episodes: int = 10
    output_dir: str = DEFAULT_OUTPUT_DIR
    collect_timeout: float = 600.0
    heartbeat_interval: float = 5.0
    send_retries: int = 3
    retry_backoff_s: float = 0.5
    adversary_mode: str = "frozen"
    adversary_params_dir: Optional[str] = None
    aggregate_seeds: Tuple[int, ...] = ()
    bench_agents: Tuple[int, ...] = (9, 25)
    bench_iterations: int = 3


_KEYS = {f.name for f in fields(RunConfig)}
_INT_KEYS = {"M", "seed", "buffer_size", "batch_size", "episode_length", "max_transition_number",
             "update_every", "hidden_units", "hidden_layers", "listen_port", "max_iterations",
             "eval_every", "eval_episodes", "send_retries", "bench_iterations"}
_FLOAT_KEYS = {"gamma", "lr", "tau", "exploration_sigma", "d", "epsilon", "box", "collect_timeout",
               "heartbeat_interval", "retry_backoff_s"}
_TUPLE_KEYS = {"aggregate_seeds", "bench_agents"}


def tier_for(table, M):
    """Entry of the smallest tier at or above M (the largest tier beyond the table)."""
    for size in sorted(table):
        if M <= size:
            return table[size]
    return table[max(table)]


def _parse_value(key, raw):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError("not finite")
            return value
        if key in _TUPLE_KEYS:
            return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError as e:
        raise ConfigError(f"cannot parse {key}={raw!r}: {e}") from e
    return raw


def resolve(cfg: RunConfig) -> RunConfig:
    """Fill scenario-dependent defaults and check the combination."""
    updates = {}
    if cfg.env != ISING:
        tier = tier_for(PARTICLE_TIERS, cfg.M)
        for key in ("d", "epsilon", "box"):
            if getattr(cfg, key) is None:
                updates[key] = tier[key]
    else:
        for key, value in (("d", 1.0), ("epsilon", 0.0), ("box", 1.0)):
            if getattr(cfg, key) is None:
                updates[key] = value
    if cfg.episode_length is None:
        updates["episode_length"] = (tier_for(MIXED_EPISODE_LENGTHS, cfg.M) if cfg.env in MIXED_KINDS
                                     else EPISODE_LENGTH)
    if cfg.batch_size is None:
        updates["batch_size"] = BATCH_SIZES.get(cfg.env, PARTICLE_BATCH_SIZE)
    resolved = replace(cfg, **updates)
    if resolved.max_transition_number is None:
        resolved = replace(resolved, max_transition_number=4 * resolved.episode_length)
    validate(resolved)
    return resolved


def validate(cfg: RunConfig):
    checks = [
        (cfg.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}"),
        (cfg.env in ENV_KINDS, f"env must be one of {ENV_KINDS}"),
        (cfg.transport in TRANSPORTS, f"transport must be one of {TRANSPORTS}"),
        (cfg.adversary_mode in ADVERSARY_MODES, f"adversary_mode must be one of {ADVERSARY_MODES}"),
        (cfg.M >= 1, "M must be >= 1"),
        (0.0 < cfg.gamma < 1.0, "gamma must lie in (0, 1)"),
        (cfg.lr > 0, "lr must be > 0"),
        (0.0 <= cfg.tau <= 1.0, "tau must lie in [0, 1]"),
        (cfg.buffer_size >= 1, "buffer_size must be >= 1"),
        (cfg.batch_size >= 1, "batch_size must be >= 1"),
        (cfg.episode_length >= 1, "episode_length must be >= 1"),
        (cfg.max_transition_number >= 1, "max_transition_number must be >= 1"),
        (cfg.update_every >= 1, "update_every must be >= 1"),
        (cfg.exploration_sigma >= 0, "exploration_sigma must be >= 0"),
        (cfg.hidden_units >= 1 and cfg.hidden_layers >= 0, "hidden sizes must be positive"),
        (cfg.d > 0, "d must be > 0"),
        (cfg.epsilon >= 0, "epsilon must be >= 0"),
        (cfg.epsilon <= cfg.d, f"epsilon={cfg.epsilon} exceeds d={cfg.d}"),
        (cfg.box > 0, "box must be > 0"),
        (0 <= cfg.listen_port <= 65535, "listen_port must lie in [0, 65535]"),
        (cfg.max_iterations >= 0, "max_iterations must be >= 0"),
        (cfg.eval_every >= 1, "eval_every must be >= 1"),
        (cfg.eval_episodes >= 1, "eval_episodes must be >= 1"),
        (cfg.collect_timeout > 0, "collect_timeout must be > 0"),
        (cfg.heartbeat_interval > 0, "heartbeat_interval must be > 0"),
        (cfg.send_retries >= 1, "send_retries must be >= 1"),
        (cfg.retry_backoff_s >= 0, "retry_backoff_s must be >= 0"),
        (all(m >= 1 for m in cfg.bench_agents), "bench_agents must be positive"),
        (cfg.bench_iterations >= 1, "bench_iterations must be >= 1"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    if cfg.env == ISING and math.isqrt(cfg.M) ** 2 != cfg.M:
        raise ConfigError(f"the Ising lattice needs a square M, got {cfg.M}")
    if cfg.env in MIXED_KINDS and cfg.M < 2:
        raise ConfigError(f"{cfg.env} needs M >= 2")


def parse_config(text, **overrides) -> RunConfig:
    """Parse key=value text into a resolved RunConfig."""
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {number}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {number}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    values.update(overrides)
    return resolve(RunConfig(**values))


def load_config(path, **overrides) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), **overrides)


def format_config(cfg: RunConfig) -> str:
    """Fully resolved config as key=value text; parse_config reads it back unchanged."""
    lines = []
    for key, value in asdict(cfg).items():
        if value is None:
            continue
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def env_config(cfg: RunConfig) -> EnvConfig:
    return EnvConfig(
        kind=cfg.env,
        num_agents=cfg.M,
        episode_length=cfg.episode_length,
        box=cfg.box,
        d=cfg.d,
        epsilon=cfg.epsilon,
    )
