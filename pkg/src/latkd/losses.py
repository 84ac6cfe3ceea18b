"""Composite training loss: cross-entropy plus teacher KL terms.

The per-row objective is

    CE(hard label, prediction) + kl_weight * sum_i KL(teacher_i || prediction)

averaged over rows. With no teachers it is exactly mean cross-entropy. The
same loss (and its logit gradient) drives both the neural net and the boosted
trees, so the augmentation semantics are identical across learners.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Probabilities are clamped inside logs to avoid log(0); the clamp is narrow
# enough not to perturb any loss visibly.
PROB_CLIP = 1e-7


def as_teacher_matrix(teacher: np.ndarray, n_rows: int | None = None) -> np.ndarray:
    """Validate a teacher output matrix: rows are probability vectors."""
    q = np.asarray(teacher, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != 2:
        raise ValueError(f"teacher outputs must have shape (n, 2), got {q.shape}")
    if n_rows is not None and q.shape[0] != n_rows:
        raise ValueError(
            f"teacher row count {q.shape[0]} does not match data row count {n_rows}"
        )
    if np.any(q < 0.0) or np.any(np.abs(q.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("teacher rows must be probability vectors (>=0, sum to 1)")
    return q


def apply_temperature(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Sharpen (T<1) or soften (T>1) a probability matrix: p^(1/T), renormalized.

    T == 1 returns the input unchanged (bit-exact), which keeps the default
    configuration free of any renormalization noise.
    """
    if temperature == 1.0:
        return probs
    q = np.clip(probs, PROB_CLIP, None) ** (1.0 / temperature)
    return q / q.sum(axis=1, keepdims=True)


@dataclass
class CompositeLossSpec:
    """Teacher outputs and weighting for the composite loss.

    ``teacher_outputs`` holds one (n, 2) probability matrix per teacher; empty
    means plain cross-entropy. ``temperature`` is applied to the teacher rows
    once, at construction.
    """

    teacher_outputs: Sequence[np.ndarray] = ()
    kl_weight: float = 1.0
    temperature: float = 1.0
    _effective: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        mats = [as_teacher_matrix(t) for t in self.teacher_outputs]
        self._effective = [apply_temperature(q, self.temperature) for q in mats]

    @property
    def teachers(self) -> list[np.ndarray]:
        """Temperature-adjusted teacher matrices used by loss and gradients."""
        return self._effective

    @property
    def n_teachers(self) -> int:
        return len(self._effective)

    def check_rows(self, n_rows: int) -> None:
        for q in self._effective:
            if q.shape[0] != n_rows:
                raise ValueError(
                    f"teacher row count {q.shape[0]} does not match data row count {n_rows}"
                )

    def take(self, idx: np.ndarray) -> "CompositeLossSpec":
        """Row-sliced view for mini-batches (temperature already applied)."""
        sliced = CompositeLossSpec((), self.kl_weight, 1.0)
        sliced._effective = [q[idx] for q in self._effective]
        return sliced


def _as_onehot(labels: np.ndarray) -> np.ndarray:
    y = np.asarray(labels)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("hard labels must be binary 0/1")
    out = np.zeros((y.shape[0], 2), dtype=np.float64)
    out[np.arange(y.shape[0]), y.astype(np.intp)] = 1.0
    return out


def _kl_rows(q: np.ndarray, p_clipped: np.ndarray) -> np.ndarray:
    # q * log(q / p); terms with q == 0 contribute exactly 0.
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(
            q > 0.0, q * (np.log(np.maximum(q, PROB_CLIP)) - np.log(p_clipped)), 0.0
        )
    return terms.sum(axis=1)


def composite_loss(
    predictions: np.ndarray, hard_labels: np.ndarray, spec: CompositeLossSpec
) -> float:
    """Mean over rows of CE(label, prediction) + kl_weight * sum_i KL(q_i || prediction)."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(hard_labels)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"predictions must have shape (n, 2), got {p.shape}")
    if p.shape[0] != y.shape[0]:
        raise ValueError("predictions and labels disagree on row count")
    if np.any(p < -1e-9) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("prediction rows must be probability vectors")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("hard labels must be binary 0/1")
    spec.check_rows(p.shape[0])

    pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    per_row = -np.log(pc[np.arange(p.shape[0]), y.astype(np.intp)])
    if spec.teachers:
        kl = np.zeros(p.shape[0])
        for q in spec.teachers:
            kl += _kl_rows(q, pc)
        per_row = per_row + spec.kl_weight * kl
    return float(np.mean(per_row))


def logit_gradient(
    predictions: np.ndarray, hard_labels: np.ndarray, spec: CompositeLossSpec
) -> np.ndarray:
    """Gradient of the (unaveraged) composite loss w.r.t. softmax logits.

    Per row: (p - onehot) + kl_weight * sum_i (p - q_i). Callers divide by the
    row count to match the mean-over-rows loss.
    """
    p = np.asarray(predictions, dtype=np.float64)
    grad = p - _as_onehot(hard_labels)
    if spec.teachers:
        extra = np.zeros_like(p)
        for q in spec.teachers:
            extra += p - q
        grad = grad + spec.kl_weight * extra
    return grad
