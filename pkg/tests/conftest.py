import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)


def quick_mlp(**overrides):
    """A small network config that keeps unit tests fast."""
    from bcpi.learners import MlpConfig

    defaults = dict(hidden_layers=(16, 16), max_epochs=60, early_stop_patience=10)
    defaults.update(overrides)
    return MlpConfig(**defaults)
