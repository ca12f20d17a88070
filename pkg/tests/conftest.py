import numpy as np
import pytest

from amcsim.device import DeviceParams


@pytest.fixture
def params():
    """Default (noisy) device parameters."""
    return DeviceParams()


@pytest.fixture
def quiet_params():
    """Fully deterministic device: both noise sigmas zero."""
    return DeviceParams(sigma_write=0.0, sigma_read=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
