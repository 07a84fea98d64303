import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from sisynth.polyalg import Poly

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


@st.composite
def polys(draw, nvars=None, max_degree=4, max_terms=6):
    """Random polynomial with small integer coefficients (exact float arithmetic)."""
    n = nvars if nvars is not None else draw(st.integers(1, 4))
    k = draw(st.integers(0, max_terms))
    terms = {}
    for _ in range(k):
        deg = draw(st.integers(0, max_degree))
        e = [0] * n
        for _ in range(deg):
            e[draw(st.integers(0, n - 1))] += 1
        terms[tuple(e)] = draw(st.integers(-5, 5))
    return Poly.from_terms(n, terms)


@st.composite
def poly_pairs(draw, count=2, max_degree=4):
    n = draw(st.integers(1, 4))
    return tuple(draw(polys(nvars=n, max_degree=max_degree)) for _ in range(count))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
