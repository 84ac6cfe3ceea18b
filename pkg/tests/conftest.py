import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_matrix(features, labels, event_time=None, fingerprint="test-schema"):
    """Small helper: DesignMatrix from plain arrays."""
    from latkd.data import DesignMatrix

    features = np.asarray(features, dtype=np.float64)
    if event_time is None:
        event_time = np.arange(features.shape[0], dtype=np.float64)
    return DesignMatrix(
        features=features,
        labels=np.asarray(labels, dtype=np.int8),
        event_time=np.asarray(event_time, dtype=np.float64),
        schema_fingerprint=fingerprint,
    )


def separable_toy(n=400, seed=0, fingerprint="toy"):
    """Linearly separable two-feature set with a clear margin."""
    r = np.random.default_rng(seed)
    n_pos = n // 2
    neg = r.normal(loc=[-2.0, -2.0], scale=0.5, size=(n - n_pos, 2))
    pos = r.normal(loc=[2.0, 2.0], scale=0.5, size=(n_pos, 2))
    X = np.concatenate([neg, pos])
    y = np.concatenate([np.zeros(n - n_pos, dtype=np.int8), np.ones(n_pos, dtype=np.int8)])
    perm = r.permutation(n)
    return make_matrix(X[perm], y[perm], fingerprint=fingerprint)
