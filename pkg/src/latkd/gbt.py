"""Second-order gradient-boosted trees for binary classification.

Exact greedy split search over sorted feature values with the usual
gain/regularization scheme (L2 on leaf weights, L1 via soft-thresholding,
minimum split gain, minimum child hessian mass), row/column subsampling per
round, and a logistic objective optionally augmented with teacher KL terms so
the same label-augmentation training applies to trees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import scan_sorted_feature
from .data import DesignMatrix
from .errors import TrainingError
from .losses import CompositeLossSpec, composite_loss
from .serialize import content_hash, seeded_rng


@dataclass(frozen=True)
class GbtConfig:
    n_estimators: int = 200
    learning_rate: float = 0.1
    max_depth: int = 3
    min_child_weight: float = 2.89
    gamma: float = 0.9
    reg_lambda: float = 40.0
    reg_alpha: float = 3.0
    subsample: float = 0.94
    colsample_bytree: float = 0.8
    seed: int = 0
    # Dense matrices mark a missing continuous value with this sentinel; rows
    # carrying it learn a default direction at each split. None disables.
    missing_value: float | None = -0.001

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ValueError("n_estimators and max_depth must be >= 1")
        if not (0.0 < self.subsample <= 1.0 and 0.0 < self.colsample_bytree <= 1.0):
            raise ValueError("subsample fractions must lie in (0, 1]")
        if min(self.gamma, self.reg_lambda, self.reg_alpha) < 0:
            raise ValueError("regularizers must be >= 0")
        if self.min_child_weight < 0:
            raise ValueError("min_child_weight must be >= 0")

    def to_dict(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "min_child_weight": self.min_child_weight,
            "gamma": self.gamma,
            "reg_lambda": self.reg_lambda,
            "reg_alpha": self.reg_alpha,
            "subsample": self.subsample,
            "colsample_bytree": self.colsample_bytree,
            "seed": self.seed,
            "missing_value": self.missing_value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtConfig":
        return cls(**d)


@dataclass
class TreeNode:
    """Either an internal split (feature/threshold/missing direction + two
    children) or a leaf carrying a logit increment."""

    feature_index: int | None = None
    threshold: float | None = None
    missing_goes: str | None = None  # "left" | "right"
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    weight: float | None = None

    @classmethod
    def leaf(cls, weight: float) -> "TreeNode":
        return cls(weight=float(weight))

    @classmethod
    def split(cls, feature_index, threshold, missing_goes, left, right) -> "TreeNode":
        return cls(
            feature_index=int(feature_index),
            threshold=float(threshold),
            missing_goes=missing_goes,
            left=left,
            right=right,
        )

    @property
    def is_leaf(self) -> bool:
        return self.weight is not None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"weight": self.weight}
        return {
            "feature": self.feature_index,
            "threshold": self.threshold,
            "missing": self.missing_goes,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "weight" in d:
            return cls.leaf(d["weight"])
        return cls.split(
            d["feature"],
            d["threshold"],
            d["missing"],
            cls.from_dict(d["left"]),
            cls.from_dict(d["right"]),
        )


# ---------------------------------------------------------------------------
# objective


def grad_hess(
    predictions: np.ndarray,
    hard_labels: np.ndarray,
    teachers: Sequence[np.ndarray] = (),
    kl_weight: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row gradient and hessian of the composite logistic objective.

    gradient = (p - y) + kl_weight * sum_i (p - q_i)
    hessian  = (1 + kl_weight * T) * p * (1 - p)

    where q_i is teacher i's positive-class probability and T the teacher
    count. With no teachers this is the standard logistic grad/hess.
    """
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(hard_labels, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("predictions must lie strictly inside (0, 1)")
    qs = [positive_prob(q, p.shape[0]) for q in teachers]
    grad = p - y
    for q in qs:
        grad = grad + kl_weight * (p - q)
    hess = (1.0 + kl_weight * len(qs)) * p * (1.0 - p)
    return grad, hess


def positive_prob(teacher: np.ndarray, n_rows: int | None = None) -> np.ndarray:
    """Positive-class probability vector from a teacher output ((n,2) or (n,))."""
    q = np.asarray(teacher, dtype=np.float64)
    if q.ndim == 2:
        q = q[:, 1]
    if n_rows is not None and q.shape[0] != n_rows:
        raise ValueError("teacher row count does not match data row count")
    if np.any((q < 0.0) | (q > 1.0)):
        raise ValueError("teacher probabilities must lie in [0, 1]")
    return q


# ---------------------------------------------------------------------------
# tree growing


def _leaf_weight(g_sum: float, h_sum: float, config: GbtConfig) -> float:
    # L1 soft-threshold is the closed-form optimum for |w| regularization.
    shrunk = max(abs(g_sum) - config.reg_alpha, 0.0)
    if shrunk == 0.0:
        return 0.0
    return -math.copysign(shrunk, g_sum) / (h_sum + config.reg_lambda)


@dataclass(frozen=True)
class _Split:
    feature: int
    threshold: float
    missing_left: bool
    gain: float


def _best_split(X, g, h, g_tot, h_tot, config: GbtConfig) -> _Split | None:
    best: _Split | None = None
    for f in range(X.shape[1]):
        col = X[:, f]
        if config.missing_value is not None:
            miss = col == config.missing_value
        else:
            miss = None
        if miss is not None and miss.any():
            keep = ~miss
            v, gv, hv = col[keep], g[keep], h[keep]
            g_miss = float(np.sum(g[miss]))
            h_miss = float(np.sum(h[miss]))
        else:
            v, gv, hv = col, g, h
            g_miss = 0.0
            h_miss = 0.0
        if v.shape[0] < 2:
            continue
        order = np.argsort(v, kind="stable")
        vs = np.ascontiguousarray(v[order])
        gain, pos, missing_left = scan_sorted_feature(
            vs,
            np.ascontiguousarray(gv[order]),
            np.ascontiguousarray(hv[order]),
            g_tot,
            h_tot,
            g_miss,
            h_miss,
            config.reg_lambda,
            config.gamma,
            config.min_child_weight,
        )
        if pos < 0 or gain <= 0.0:
            continue
        if best is None or gain > best.gain:
            best = _Split(f, 0.5 * (vs[pos] + vs[pos + 1]), missing_left, gain)
    return best


def _route_left(col: np.ndarray, threshold: float, missing_left: bool, missing_value) -> np.ndarray:
    if missing_value is None:
        return col < threshold
    miss = col == missing_value
    return np.where(miss, missing_left, col < threshold)


def build_tree(
    features: np.ndarray,
    gradients: np.ndarray,
    hessians: np.ndarray,
    config: GbtConfig,
) -> TreeNode:
    """Grow one tree by exact greedy split search.

    Splits with gain <= 0 or violating min_child_weight are rejected; missing
    (sentinel) rows are routed to whichever side maximizes gain. Degenerate
    data yields a single leaf.
    """
    X = np.asarray(features, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    h = np.asarray(hessians, dtype=np.float64)
    if X.ndim != 2 or g.shape[0] != X.shape[0] or h.shape[0] != X.shape[0]:
        raise ValueError("features, gradients and hessians must align on rows")
    if X.shape[0] < 1:
        raise ValueError("build_tree needs at least one row")

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        g_sum = float(np.sum(g[idx]))
        h_sum = float(np.sum(h[idx]))
        if depth >= config.max_depth or idx.shape[0] < 2:
            return TreeNode.leaf(_leaf_weight(g_sum, h_sum, config))
        split = _best_split(X[idx], g[idx], h[idx], g_sum, h_sum, config)
        if split is None:
            return TreeNode.leaf(_leaf_weight(g_sum, h_sum, config))
        goes_left = _route_left(
            X[idx, split.feature], split.threshold, split.missing_left, config.missing_value
        )
        return TreeNode.split(
            split.feature,
            split.threshold,
            "left" if split.missing_left else "right",
            grow(idx[goes_left], depth + 1),
            grow(idx[~goes_left], depth + 1),
        )

    return grow(np.arange(X.shape[0]), 0)


def _remap_features(node: TreeNode, cols: np.ndarray) -> None:
    if node.is_leaf:
        return
    node.feature_index = int(cols[node.feature_index])
    _remap_features(node.left, cols)
    _remap_features(node.right, cols)


def tree_predict(node: TreeNode, X: np.ndarray, missing_value) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.float64)

    def walk(n: TreeNode, idx: np.ndarray) -> None:
        if n.is_leaf:
            out[idx] = n.weight
            return
        goes_left = _route_left(
            X[idx, n.feature_index], n.threshold, n.missing_goes == "left", missing_value
        )
        walk(n.left, idx[goes_left])
        walk(n.right, idx[~goes_left])

    walk(node, np.arange(X.shape[0]))
    return out


# ---------------------------------------------------------------------------
# model


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class GbtModel:
    base_score: float
    trees: list[TreeNode]
    config: GbtConfig
    n_features: int

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"feature width mismatch: model expects {self.n_features}, got {X.shape[1] if X.ndim == 2 else 'non-2d'}"
            )
        z = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            z += self.config.learning_rate * tree_predict(tree, X, self.config.missing_value)
        return z

    def score(self, X: np.ndarray) -> np.ndarray:
        """Positive-class probabilities."""
        return _sigmoid(self.decision_function(X))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        p = self.score(X)
        return np.column_stack([1.0 - p, p])

    def to_payload(self) -> dict:
        return {
            "format": "latkd.gbt",
            "version": 1,
            "base_score": self.base_score,
            "n_features": self.n_features,
            "config": self.config.to_dict(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "GbtModel":
        if payload.get("format") != "latkd.gbt":
            raise ValueError("not a boosted-tree model payload")
        return cls(
            base_score=float(payload["base_score"]),
            trees=[TreeNode.from_dict(t) for t in payload["trees"]],
            config=GbtConfig.from_dict(payload["config"]),
            n_features=int(payload["n_features"]),
        )

    @property
    def model_hash(self) -> str:
        return content_hash(self.to_payload())


@dataclass
class GbtTrainResult:
    model: GbtModel
    loss_trace: list[float]
    rows_consumed: int


def _round_row_indices(seed: int, round_index: int, n: int, subsample: float) -> np.ndarray:
    """Deterministic per-round row subsample (sorted, without replacement).

    Exposed so audits can reconstruct exactly which rows each tree saw.
    """
    if subsample >= 1.0:
        return np.arange(n)
    k = max(1, int(math.floor(subsample * n)))
    rng = seeded_rng(seed, "round", round_index, "rows")
    return np.sort(rng.choice(n, size=k, replace=False))


def _round_col_indices(seed: int, round_index: int, d: int, colsample: float) -> np.ndarray:
    if colsample >= 1.0:
        return np.arange(d)
    k = max(1, int(math.floor(colsample * d)))
    rng = seeded_rng(seed, "round", round_index, "cols")
    return np.sort(rng.choice(d, size=k, replace=False))


def train(
    data: DesignMatrix,
    teachers: Sequence[np.ndarray] = (),
    config: GbtConfig = GbtConfig(),
    kl_weight: float = 1.0,
) -> GbtTrainResult:
    """Boost ``n_estimators`` rounds on one frame of data.

    ``teachers`` holds per-teacher output matrices aligned row-for-row with
    ``data``; the base score is the log-odds of the training prior. The loss
    trace records the composite training loss after every round.
    """
    X = data.features
    y = data.labels.astype(np.float64)
    if np.any(data.labels < 0):
        raise TrainingError("training data contains unlabeled rows")
    n_pos = int(np.sum(data.labels == 1))
    n_neg = int(np.sum(data.labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("training data must contain both classes")
    q_mats = [np.column_stack([1.0 - q, q]) for q in (positive_prob(t, X.shape[0]) for t in teachers)]
    loss_spec = CompositeLossSpec(q_mats, kl_weight=kl_weight)
    q_list = [m[:, 1] for m in q_mats]

    n, d = X.shape
    base = math.log(n_pos / n_neg)
    z = np.full(n, base, dtype=np.float64)
    trees: list[TreeNode] = []
    trace: list[float] = []
    for m in range(config.n_estimators):
        p = _sigmoid(z)
        g, h = grad_hess(p, y, q_list, kl_weight)
        rows = _round_row_indices(config.seed, m, n, config.subsample)
        cols = _round_col_indices(config.seed, m, d, config.colsample_bytree)
        tree = build_tree(X[np.ix_(rows, cols)], g[rows], h[rows], config)
        if cols.shape[0] != d:
            _remap_features(tree, cols)
        z = z + config.learning_rate * tree_predict(tree, X, config.missing_value)
        trees.append(tree)
        p_new = _sigmoid(z)
        trace.append(
            composite_loss(np.column_stack([1.0 - p_new, p_new]), data.labels, loss_spec)
        )
        if not math.isfinite(trace[-1]):
            raise TrainingError(f"training loss diverged at round {m}")
    model = GbtModel(base_score=base, trees=trees, config=config, n_features=d)
    return GbtTrainResult(model=model, loss_trace=trace, rows_consumed=n)
