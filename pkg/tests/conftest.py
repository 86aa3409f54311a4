import numpy as np
import pytest


def rel(a, b) -> float:
    """Relative Frobenius distance of ``a`` from the reference ``b``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / (scale if scale > 0 else 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
