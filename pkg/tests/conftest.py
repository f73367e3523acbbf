import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cacheadapt import EmbeddingMatrix, l2_normalize

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def unit_matrix(rng, rows: int, dim: int, prefix: str = "s") -> EmbeddingMatrix:
    """Random canonicalized embedding matrix with unique ids."""
    data = rng.normal(size=(rows, dim))
    return l2_normalize(EmbeddingMatrix(data, tuple(f"{prefix}{i}" for i in range(rows))))


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
