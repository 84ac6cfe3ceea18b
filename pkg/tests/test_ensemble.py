import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latkd.ensemble import EnsembleModel


class StubModel:
    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)

    def predict_proba(self, X):
        return self.probs

    @property
    def model_hash(self):
        from latkd.serialize import content_hash, encode_array

        return content_hash(encode_array(self.probs))

    def to_payload(self):
        return {"format": "stub"}


class TestEnsembleScore:
    def test_two_member_average(self):
        a = StubModel([[0.8, 0.2]])
        b = StubModel([[0.6, 0.4]])
        out = EnsembleModel([a, b]).predict_proba(np.zeros((1, 1)))
        assert np.allclose(out, [[0.7, 0.3]])

    def test_single_member_is_identity(self):
        a = StubModel([[0.31, 0.69], [0.5, 0.5]])
        out = EnsembleModel([a]).predict_proba(np.zeros((2, 1)))
        assert np.array_equal(out, a.probs)

    def test_three_member_weighted_mean(self):
        members = [StubModel([[0.9, 0.1]]), StubModel([[0.5, 0.5]]), StubModel([[0.1, 0.9]])]
        out = EnsembleModel(members, weights=[0.5, 0.25, 0.25]).predict_proba(np.zeros((1, 1)))
        expected = 0.5 * np.array([0.9, 0.1]) + 0.25 * np.array([0.5, 0.5]) + 0.25 * np.array([0.1, 0.9])
        assert np.allclose(out[0], expected)

    def test_empty_member_list_rejected(self):
        with pytest.raises(ValueError, match="at least one member"):
            EnsembleModel([])

    def test_bad_weights_rejected(self):
        a = StubModel([[0.5, 0.5]])
        with pytest.raises(ValueError, match="sum to 1"):
            EnsembleModel([a], weights=[0.7])
        with pytest.raises(ValueError, match="one weight per member"):
            EnsembleModel([a], weights=[0.5, 0.5])

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_uniform_average_is_permutation_invariant_and_convex(self, seed):
        r = np.random.default_rng(seed)
        k = int(r.integers(2, 5))
        n = int(r.integers(1, 8))
        probs = []
        for _ in range(k):
            q = r.random((n, 2)) + 1e-6
            probs.append(q / q.sum(axis=1, keepdims=True))
        members = [StubModel(p) for p in probs]
        X = np.zeros((n, 1))
        base = EnsembleModel(members).predict_proba(X)
        perm = list(r.permutation(k))
        shuffled = EnsembleModel([members[i] for i in perm]).predict_proba(X)
        assert np.allclose(base, shuffled, atol=1e-15)
        stack = np.stack(probs)
        assert np.all(base >= stack.min(axis=0) - 1e-12)
        assert np.all(base <= stack.max(axis=0) + 1e-12)
        assert np.allclose(base.sum(axis=1), 1.0, atol=1e-9)

    def test_payload_references_members_by_hash(self):
        a = StubModel([[0.8, 0.2]])
        b = StubModel([[0.6, 0.4]])
        ens = EnsembleModel([a, b])
        payload = ens.to_payload()
        assert payload["members"] == [a.model_hash, b.model_hash]
        assert len(ens.model_hash) == 64
