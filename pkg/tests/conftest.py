import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cdcr_fatigue.calibration import healthy_params
from cdcr_fatigue.config import GRAVITY_OFF, ChainConfig, StiffnessParams

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cfg() -> ChainConfig:
    return ChainConfig()


@pytest.fixture(scope="session")
def cfg_nograv() -> ChainConfig:
    return ChainConfig(gravity=GRAVITY_OFF)


@pytest.fixture(scope="session")
def params() -> StiffnessParams:
    return healthy_params()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def random_admissible_q(cfg: ChainConfig, rng: np.random.Generator, scale: float = 0.5) -> np.ndarray:
    """Arbitrary (not loop-closed) joint vector well inside the admissible box."""
    n = cfg.n_modules
    theta = rng.uniform(-scale, scale, 6 * n) * cfg.limit_angle / 2
    ell = rng.uniform(-scale, scale, 5 * n) * cfg.max_compression / 2
    return np.r_[theta, ell]


DEG = math.pi / 180
