import numpy as np
import pytest


def rand_spd(rng: np.random.Generator, d: int, scale: float = 1.0) -> np.ndarray:
    """Random symmetric positive-definite matrix with eigenvalues in [0.3, ~3]*scale."""
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    vals = rng.uniform(0.3, 3.0, size=d) * scale
    return q @ np.diag(vals) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
