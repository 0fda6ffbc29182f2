import pytest

from run_config import parse_config

SMALL_RUN = dict(
    hidden_units=8,
    hidden_layers=2,
    batch_size=8,
    max_transition_number=16,
    episode_length=5,
    max_iterations=2,
    eval_episodes=1,
    heartbeat_interval=30.0,
    collect_timeout=60.0,
)


@pytest.fixture
def small_cfg(tmp_path):
    """Resolved RunConfig with tiny networks and batches; keyword overrides win."""

    def build(**overrides):
        values = dict(SMALL_RUN, output_dir=str(tmp_path / "run"))
        values.update(overrides)
        return parse_config("", **values)

    return build
