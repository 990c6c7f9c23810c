import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def well_conditioned(n, seed):
    """Random matrix with singular values in [1, 3]."""
    r = np.random.default_rng(seed)
    q1, _ = np.linalg.qr(r.standard_normal((n, n)))
    q2, _ = np.linalg.qr(r.standard_normal((n, n)))
    return q1 @ np.diag(r.uniform(1.0, 3.0, n)) @ q2
