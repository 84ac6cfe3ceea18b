"""Output-averaging ensemble over probability-emitting members."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .serialize import content_hash


class EnsembleModel:
    """Weighted arithmetic mean of member probability outputs.

    Averaging happens in probability space (the members' actual outputs), so
    every ensemble row stays a valid distribution and lies inside the
    per-member envelope.
    """

    def __init__(self, members: Sequence, weights: Sequence[float] | None = None):
        if not members:
            raise ValueError("an ensemble needs at least one member")
        self.members = list(members)
        if weights is None:
            w = np.full(len(self.members), 1.0 / len(self.members))
        else:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape[0] != len(self.members):
                raise ValueError("one weight per member required")
            if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-9:
                raise ValueError("weights must be nonnegative and sum to 1")
        self.weights = w

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        out = None
        for w, member in zip(self.weights, self.members):
            p = member.predict_proba(X)
            out = w * p if out is None else out + w * p
        return out

    def score(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X)[:, 1]

    def to_payload(self) -> dict:
        """Manifest referencing members by content hash (stored separately)."""
        return {
            "format": "latkd.ensemble",
            "version": 1,
            "members": [m.model_hash for m in self.members],
            "weights": [float(w) for w in self.weights],
        }

    @property
    def model_hash(self) -> str:
        return content_hash(self.to_payload())
