import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def simplex_points(dim, min_mass=0.0):
    """Hypothesis strategy for points on the simplex of a fixed dimension."""
    raw = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=dim, max_size=dim)

    def build(v):
        v = np.asarray(v) + min_mass + 1e-3
        return v / v.sum()

    return raw.map(build)


def random_simplex(rng, dim, alpha=1.0, floor=0.0):
    p = rng.dirichlet(np.full(dim, alpha))
    if floor:
        p = np.maximum(p, floor)
        p /= p.sum()
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
