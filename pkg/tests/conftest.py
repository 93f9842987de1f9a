import numpy as np
import pytest

from simulators.billiard import WedgeGeometry
from simulators.mode_competition import CompetitionConfig
from simulators.mode_system import IntegrationConfig, ModeSystem, reference_mode_system, saturation_matrix
from simulators.stability_map import StabilityParams


def unit_system(mode_count=2, noise=6.25, beta_self=1e-3, beta_cross=2e-3, gains=None):
    """gamma = 1 per mode; same 2 eta / gamma as the reference set, faster saturation."""
    gains = np.full(mode_count, 2.0) if gains is None else np.asarray(gains, dtype=float)
    return ModeSystem(
        gains=gains,
        losses=np.ones(mode_count),
        noise_strengths=np.full(mode_count, noise),
        saturation=saturation_matrix(mode_count, beta_self, beta_cross),
    )


def small_competition(trials=64, seed=7, initial=(7.5, 5.0), t_end=6.0, **kwargs):
    sys_ = kwargs.pop('sys', None) or unit_system(len(initial))
    integration = IntegrationConfig.for_system(sys_, t_end, record_stride=kwargs.pop('record_stride', 5))
    return CompetitionConfig(sys=sys_, initial_populations=np.asarray(initial, dtype=float),
                             integration=integration, trials=trials, master_seed=seed, **kwargs)


@pytest.fixture
def reference_system():
    return reference_mode_system(2)


@pytest.fixture
def unit_wedge():
    """g = m = 1 so lengths, times and energies stay O(1)."""
    def make(degrees):
        return WedgeGeometry.from_degrees(degrees, gravity=1.0, mass=1.0)
    return make


@pytest.fixture
def reference_stability():
    return StabilityParams.reference_defaults()
