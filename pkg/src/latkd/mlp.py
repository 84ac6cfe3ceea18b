"""From-scratch feed-forward binary classifier.

Architecture: Dense+ReLU -> batch norm -> dropout -> Dense+ReLU -> dropout ->
Dense(2)+softmax, trained with seeded mini-batch SGD (momentum 0.9) under
plain cross-entropy or the teacher-augmented composite loss. Everything is
numpy; training is bit-reproducible given a seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .data import DesignMatrix
from .errors import TrainingError
from .losses import CompositeLossSpec, composite_loss, logit_gradient
from .metrics import average_precision
from .serialize import content_hash, decode_array, encode_array, seeded_rng

TRAIN = "train"
INFER = "infer"


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden: tuple[int, int] = (400, 400)
    learning_rate: float = 0.01
    batch_size: int = 512
    dropout_keep_prob: float = 0.5
    momentum: float = 0.9
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.input_dim < 1 or any(h < 1 for h in self.hidden) or len(self.hidden) != 2:
            raise ValueError("architecture needs input_dim >= 1 and two hidden widths")
        if not (0.0 < self.dropout_keep_prob <= 1.0):
            raise ValueError("dropout_keep_prob must lie in (0, 1]")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs a batch statistic)")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, self.hidden[0], self.hidden[1], 2]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "dropout_keep_prob": self.dropout_keep_prob,
            "momentum": self.momentum,
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpArchitecture":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


_PARAM_NAMES = ("W1", "b1", "gamma", "beta", "W2", "b2", "W3", "b3")
_STAT_NAMES = ("run_mean", "run_var")


class MlpModel:
    """Weights, batch-norm state and mode for the fixed layer pattern."""

    def __init__(self, arch: MlpArchitecture, tensors: dict[str, np.ndarray], mode: str = INFER):
        self.arch = arch
        self.mode = mode
        for name in _PARAM_NAMES + _STAT_NAMES:
            setattr(self, name, np.asarray(tensors[name], dtype=np.float64))
        if np.any(self.run_var <= 0):
            raise ValueError("running variance entries must stay positive")

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in _PARAM_NAMES]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_NAMES + _STAT_NAMES}

    def copy(self) -> "MlpModel":
        return MlpModel(self.arch, {k: v.copy() for k, v in self.tensors().items()}, self.mode)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return forward(self, X, INFER)

    def score(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X)[:, 1]

    def to_payload(self) -> dict:
        return {
            "format": "latkd.mlp",
            "version": 1,
            "arch": self.arch.to_dict(),
            "tensors": {k: encode_array(v) for k, v in self.tensors().items()},
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "MlpModel":
        if payload.get("format") != "latkd.mlp":
            raise ValueError("not an MLP model payload")
        arch = MlpArchitecture.from_dict(payload["arch"])
        tensors = {k: decode_array(v) for k, v in payload["tensors"].items()}
        return cls(arch, tensors, INFER)

    @property
    def model_hash(self) -> str:
        return content_hash(self.to_payload())


def init_mlp(arch: MlpArchitecture, seed: int = 0) -> MlpModel:
    """He-uniform weights, zero biases, identity batch norm; fully seeded."""
    rng = seeded_rng(seed, "mlp-init")
    sizes = arch.layer_sizes

    def he(fan_in: int, fan_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / fan_in)
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    h1, h2 = arch.hidden
    tensors = {
        "W1": he(sizes[0], h1),
        "b1": np.zeros(h1),
        "gamma": np.ones(h1),
        "beta": np.zeros(h1),
        "run_mean": np.zeros(h1),
        "run_var": np.ones(h1),
        "W2": he(h1, h2),
        "b2": np.zeros(h2),
        "W3": he(h2, 2),
        "b3": np.zeros(2),
    }
    return MlpModel(arch, tensors, TRAIN)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(
    model: MlpModel,
    batch: np.ndarray,
    mode: str | None = None,
    *,
    dropout_rng: np.random.Generator | None = None,
    update_stats: bool = False,
    want_cache: bool = False,
):
    """Run the network; returns probabilities (and the backward cache if asked).

    Train mode uses batch statistics for the normalized layer and applies
    inverted dropout; infer mode uses running statistics and no dropout, and
    is a pure function of (model, batch).
    """
    X = np.asarray(batch, dtype=np.float64)
    mode = mode or model.mode
    if X.ndim != 2 or X.shape[1] != model.arch.input_dim:
        raise ValueError(
            f"input width mismatch: model expects {model.arch.input_dim}, got "
            f"{X.shape[1] if X.ndim == 2 else 'non-2d'}"
        )
    if mode == TRAIN and X.shape[0] < 2:
        raise ValueError("train-mode forward needs at least 2 rows for batch statistics")

    arch = model.arch
    keep = arch.dropout_keep_prob
    z1 = X @ model.W1 + model.b1
    a1 = np.maximum(z1, 0.0)

    if mode == TRAIN:
        mu = a1.mean(axis=0)
        var = a1.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + arch.bn_eps)
        xhat = (a1 - mu) * inv_std
        if update_stats:
            m = arch.bn_momentum
            model.run_mean = m * model.run_mean + (1.0 - m) * mu
            model.run_var = m * model.run_var + (1.0 - m) * var
    else:
        inv_std = 1.0 / np.sqrt(model.run_var + arch.bn_eps)
        xhat = (a1 - model.run_mean) * inv_std
    bn = model.gamma * xhat + model.beta

    if mode == TRAIN and keep < 1.0:
        if dropout_rng is None:
            raise ValueError("train-mode forward with dropout needs an RNG")
        mask1 = (dropout_rng.random(bn.shape) < keep) / keep
        mask2_draw = dropout_rng.random((X.shape[0], arch.hidden[1]))
    else:
        mask1 = None
        mask2_draw = None
    d1 = bn * mask1 if mask1 is not None else bn

    z2 = d1 @ model.W2 + model.b2
    a2 = np.maximum(z2, 0.0)
    mask2 = (mask2_draw < keep) / keep if mask2_draw is not None else None
    d2 = a2 * mask2 if mask2 is not None else a2

    z3 = d2 @ model.W3 + model.b3
    probs = _softmax(z3)
    if not want_cache:
        return probs
    cache = {
        "mode": mode,
        "X": X,
        "z1": z1,
        "a1": a1,
        "xhat": xhat,
        "inv_std": inv_std,
        "mask1": mask1,
        "d1": d1,
        "z2": z2,
        "a2": a2,
        "mask2": mask2,
        "d2": d2,
        "probs": probs,
    }
    return probs, cache


def backward(model: MlpModel, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given d(loss)/d(logits)."""
    grads: dict[str, np.ndarray] = {}
    grads["W3"] = cache["d2"].T @ dlogits
    grads["b3"] = dlogits.sum(axis=0)
    dd2 = dlogits @ model.W3.T
    da2 = dd2 * cache["mask2"] if cache["mask2"] is not None else dd2
    dz2 = da2 * (cache["z2"] > 0.0)
    grads["W2"] = cache["d1"].T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dd1 = dz2 @ model.W2.T
    dbn = dd1 * cache["mask1"] if cache["mask1"] is not None else dd1

    xhat = cache["xhat"]
    grads["gamma"] = (dbn * xhat).sum(axis=0)
    grads["beta"] = dbn.sum(axis=0)
    dxhat = dbn * model.gamma
    if cache["mode"] == TRAIN:
        n = dbn.shape[0]
        da1 = (
            cache["inv_std"]
            / n
            * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        )
    else:
        da1 = dxhat * cache["inv_std"]
    dz1 = da1 * (cache["z1"] > 0.0)
    grads["W1"] = cache["X"].T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainOptions:
    epochs: int = 100
    seed: int = 0
    early_stop: bool = True
    patience: int = 10
    val_fraction: float = 0.1


@dataclass
class MlpTrainResult:
    model: MlpModel
    loss_trace: list[float]
    rows_consumed: int
    epochs_run: int
    stopped_early: bool
    best_epoch: int | None


def stratified_split(labels: np.ndarray, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """(train_idx, val_idx); keeps both classes in the training part."""
    val_parts = []
    train_parts = []
    for cls in (0, 1):
        idx = np.nonzero(labels == cls)[0]
        perm = idx[rng.permutation(idx.shape[0])]
        n_val = int(math.floor(fraction * idx.shape[0]))
        n_val = min(n_val, idx.shape[0] - 1)  # never empty a class from training
        val_parts.append(perm[:n_val])
        train_parts.append(perm[n_val:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(val_parts))


def train(
    model: MlpModel,
    data: DesignMatrix,
    spec: CompositeLossSpec,
    opts: TrainOptions = TrainOptions(),
) -> MlpTrainResult:
    """Seeded mini-batch SGD with momentum on the composite loss.

    Early stopping (when enabled) monitors AUPRC on a seeded stratified
    validation split and restores the best weights. The returned model is in
    infer mode; the loss trace holds the mean training loss per epoch.
    """
    y = data.labels
    if data.n_rows == 0:
        raise TrainingError("training data is empty")
    if np.any(y < 0):
        raise TrainingError("training data contains unlabeled rows")
    if int(np.sum(y == 1)) == 0 or int(np.sum(y == 0)) == 0:
        raise TrainingError("training data must contain both classes")
    spec.check_rows(data.n_rows)

    arch = model.arch
    shuffle_rng = seeded_rng(opts.seed, "mlp-shuffle")
    dropout_rng = seeded_rng(opts.seed, "mlp-dropout")

    if opts.early_stop:
        split_rng = seeded_rng(opts.seed, "mlp-valsplit")
        train_idx, val_idx = stratified_split(y, opts.val_fraction, split_rng)
        if val_idx.shape[0] == 0 or int(np.sum(y[val_idx] == 1)) == 0:
            train_idx = np.arange(data.n_rows)
            val_idx = None
    else:
        train_idx = np.arange(data.n_rows)
        val_idx = None

    X_tr = data.features[train_idx]
    y_tr = y[train_idx]
    spec_tr = spec.take(train_idx)
    X_val = data.features[val_idx] if val_idx is not None else None
    y_val = y[val_idx] if val_idx is not None else None

    velocity = {name: np.zeros_like(p) for name, p in model.parameters()}
    best_metric = -np.inf
    best_state: dict[str, np.ndarray] | None = None
    best_epoch: int | None = None
    stale = 0
    stopped_early = False
    trace: list[float] = []
    n = X_tr.shape[0]
    epochs_run = 0

    for epoch in range(opts.epochs):
        model.mode = TRAIN
        perm = shuffle_rng.permutation(n)
        starts = list(range(0, n, arch.batch_size))
        # a trailing single row cannot carry a batch statistic; merge it back
        if len(starts) > 1 and n - starts[-1] == 1:
            starts.pop()
        epoch_loss = 0.0
        for bi, s in enumerate(starts):
            e = min(s + arch.batch_size, n) if bi < len(starts) - 1 else n
            idx = perm[s:e]
            batch_spec = spec_tr.take(idx)
            probs, cache = forward(
                model, X_tr[idx], TRAIN, dropout_rng=dropout_rng, update_stats=True, want_cache=True
            )
            loss = composite_loss(probs, y_tr[idx], batch_spec)
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}, batch {bi}")
            epoch_loss += loss * idx.shape[0]
            dlogits = logit_gradient(probs, y_tr[idx], batch_spec) / idx.shape[0]
            grads = backward(model, cache, dlogits)
            for name, param in model.parameters():
                v = velocity[name]
                v *= arch.momentum
                v -= arch.learning_rate * grads[name]
                param += v
        trace.append(epoch_loss / n)
        epochs_run = epoch + 1

        if val_idx is not None:
            model.mode = INFER
            val_scores = forward(model, X_val, INFER)[:, 1]
            metric = average_precision(val_scores, y_val)
            if metric > best_metric:
                best_metric = metric
                best_state = {k: v.copy() for k, v in model.tensors().items()}
                best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= opts.patience:
                    stopped_early = True
                    break

    if best_state is not None:
        for k, v in best_state.items():
            setattr(model, k, v)
    model.mode = INFER
    return MlpTrainResult(
        model=model,
        loss_trace=trace,
        rows_consumed=data.n_rows,
        epochs_run=epochs_run,
        stopped_early=stopped_early,
        best_epoch=best_epoch,
    )


# ---------------------------------------------------------------------------
# gradient verification


def gradient_check(
    model: MlpModel,
    batch: np.ndarray,
    labels: np.ndarray,
    spec: CompositeLossSpec,
    *,
    num_params: int = 120,
    step: float = 1e-4,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Runs with dropout disabled and batch norm on running statistics, over a
    random sample of parameters across every trainable tensor. Bias-like
    tensors are nudged off zero first: zero-initialized biases put entire
    ReLU pre-activations exactly on the kink (a dead input row makes
    z2 == b2 == 0), where the loss is genuinely non-differentiable and any
    finite-difference comparison is meaningless.
    """
    if batch.shape[0] > 32:
        raise ValueError("gradient_check expects a small batch (<= 32 rows)")
    work = model.copy()
    work.mode = INFER
    nudge = seeded_rng(seed, "gradcheck-nudge")
    for name in ("b1", "b2", "b3", "beta"):
        tensor = getattr(work, name)
        sign = np.where(nudge.random(tensor.shape) < 0.5, -1.0, 1.0)
        tensor += sign * nudge.uniform(0.01, 0.03, tensor.shape)

    probs, cache = forward(work, batch, INFER, want_cache=True)
    n = batch.shape[0]
    dlogits = logit_gradient(probs, labels, spec) / n
    analytic = backward(work, cache, dlogits)

    rng = seeded_rng(seed, "gradcheck")
    names = [name for name, _ in work.parameters()]
    sizes = np.array([getattr(work, name).size for name in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(num_params, total), replace=False)
    offsets = np.cumsum(sizes)

    worst = 0.0
    for flat in picks:
        t = int(np.searchsorted(offsets, flat, side="right"))
        local = int(flat - (offsets[t - 1] if t > 0 else 0))
        tensor = getattr(work, names[t])
        orig = tensor.flat[local]

        tensor.flat[local] = orig + step
        loss_plus = composite_loss(forward(work, batch, INFER), labels, spec)
        tensor.flat[local] = orig - step
        loss_minus = composite_loss(forward(work, batch, INFER), labels, spec)
        tensor.flat[local] = orig

        fd = (loss_plus - loss_minus) / (2.0 * step)
        an = analytic[names[t]].flat[local]
        denom = max(abs(fd), abs(an), 1e-6)
        worst = max(worst, abs(fd - an) / denom)
    return worst
