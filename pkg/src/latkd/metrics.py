"""Precision-recall evaluation and multi-run aggregation.

AUPRC is computed by average-precision step summation over the distinct-score
threshold sweep — no linear interpolation between PR points, which is known to
overstate the area on imbalanced problems.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PrCurve:
    """One (recall, precision) point per distinct score, descending threshold."""

    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray
    positive_count: int
    negative_count: int

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def _check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.ndim != 1 or s.shape[0] != y.shape[0]:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be binary 0/1")
    return s, y


def pr_curve(scores, labels) -> PrCurve:
    """Threshold sweep over every distinct score, ties grouped together."""
    s, y = _check_scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("AUPRC is undefined: no positive labels present")

    order = np.argsort(-s, kind="stable")
    ss = s[order]
    ys = y[order].astype(np.float64)
    # index of the last row in each tie group = one threshold per distinct score
    last = np.nonzero(np.append(ss[:-1] != ss[1:], True))[0]
    tp = np.cumsum(ys)[last]
    predicted_pos = (last + 1).astype(np.float64)
    precision = tp / predicted_pos
    recall = tp / n_pos
    return PrCurve(
        recall=recall,
        precision=precision,
        thresholds=ss[last],
        positive_count=n_pos,
        negative_count=int(y.shape[0] - n_pos),
    )


def auprc(curve: PrCurve) -> float:
    """Average-precision step sum: sum_k (R_k - R_{k-1}) * P_k."""
    return float(np.sum(np.diff(curve.recall, prepend=0.0) * curve.precision))


def average_precision(scores, labels) -> float:
    return auprc(pr_curve(scores, labels))


def auroc(scores, labels) -> float:
    """Rank-based AUROC (ties get averaged ranks). Supplementary only —
    AUPRC is the primary metric on these imbalance levels."""
    s, y = _check_scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = int(y.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.shape[0])
    sorted_s = s[order]
    # average ranks within tie groups
    boundaries = np.nonzero(np.append(sorted_s[:-1] != sorted_s[1:], True))[0]
    start = 0
    for end in boundaries:
        ranks[order[start : end + 1]] = 0.5 * (start + end) + 1.0
        start = end + 1
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def recall_at_k(scores, labels, k: int | None = None, subset=None) -> float:
    """Fraction of positive rows ranked inside the top-k scores.

    ``k`` defaults to the total positive count (the alert budget that could in
    principle catch every positive). ``subset`` optionally restricts which
    positives are counted — e.g. the rows produced by one drift cluster — while
    the ranking is still over all rows. Ties rank by original row order.
    """
    s, y = _check_scores_labels(scores, labels)
    if k is None:
        k = int(y.sum())
    if k <= 0:
        raise ValueError("k must be positive")
    mask = y == 1
    if subset is not None:
        mask = mask & np.asarray(subset, dtype=bool)
    denom = int(mask.sum())
    if denom == 0:
        raise ValueError("no positive rows in the requested subset")
    top = np.argsort(-s, kind="stable")[:k]
    return float(mask[top].sum() / denom)


@dataclass
class RunReport:
    """AUPRC values (and wall-clock times) over repeated seeded runs."""

    auprc_runs: list[float]
    wall_clock_s: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.auprc_runs:
            raise ValueError("a run report needs at least one run")

    @property
    def mean(self) -> float:
        return float(np.mean(self.auprc_runs))

    @property
    def std(self) -> float:
        if len(self.auprc_runs) < 2:
            return 0.0
        return float(np.std(self.auprc_runs, ddof=1))

    @property
    def mean_wall_clock_s(self) -> float:
        return float(np.mean(self.wall_clock_s)) if self.wall_clock_s else 0.0

    def to_dict(self) -> dict:
        return {
            "auprc_runs": [float(v) for v in self.auprc_runs],
            "mean": self.mean,
            "std": self.std,
            "wall_clock_s": [float(v) for v in self.wall_clock_s],
        }


def relative_diff(candidate: RunReport, baseline: RunReport) -> float:
    """Percent difference of mean AUPRC against a baseline: 100*(c-b)/b."""
    if baseline.mean == 0.0:
        raise ValueError("relative difference is undefined for a zero baseline mean")
    return 100.0 * (candidate.mean - baseline.mean) / baseline.mean
