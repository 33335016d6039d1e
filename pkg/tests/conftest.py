import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedlft.lft_math import LatentFactors
from fedlft.synth import SynthSpec, generate
from fedlft.tensor_store import Shape, from_arrays

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_tensor(rng, shape=(4, 5, 3), n=None):
    """Random distinct coordinates with normal values."""
    size = int(np.prod(shape))
    n = rng.integers(0, size + 1) if n is None else n
    flat = rng.choice(size, size=n, replace=False)
    u, s, t = np.unravel_index(flat, shape)
    return from_arrays(Shape(*shape), u, s, t, rng.normal(size=n))


def unit_factors(rank=1, shape=(1, 1, 1), value=1.0):
    i, j, k = shape
    return LatentFactors(np.full((i, rank), value), np.full((j, rank), value), np.full((k, rank), value))


@pytest.fixture
def small_tensor():
    return generate(SynthSpec(Shape(20, 30, 8), true_rank=3, density=0.3, seed=4))
