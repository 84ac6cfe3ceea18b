"""Orchestration of the time-frame model chain.

Each calendar frame trains one model on that frame's data alone; models from
earlier frames (back to the truncation index K) supply soft auxiliary labels
on the current frame, which enter the loss as KL terms. Teacher outputs are
cached content-addressed so a teacher scores a given frame at most once, and
the whole chain is resumable from its persisted registry + manifest.
"""
from __future__ import annotations

import datetime as dt
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gbt as gbt_mod
from . import mlp as mlp_mod
from .data import DesignMatrix
from .ensemble import EnsembleModel
from .errors import RegistryGapError, TrainingError
from .losses import CompositeLossSpec, apply_temperature
from .metrics import average_precision, auroc
from .registry import BlobStore, RunDir, RunManifest
from .serialize import (
    canonical_json_bytes,
    content_hash,
    decode_array,
    derive_seed,
    encode_array,
    sha256_hex,
    strip_volatile,
)

MLP = "mlp"
GBT = "gbt"
ENSEMBLE = "ensemble"
LEARNERS = (MLP, GBT, ENSEMBLE)

SAME_LEARNER = "same_learner"
ENSEMBLE_CHAIN = "ensemble_chain"


@dataclass(frozen=True)
class LatkdConfig:
    """Chain-level knobs: truncation, KL weighting, learner wiring."""

    truncation_k: int = 0
    kl_weight: float = 1.0
    temperature: float = 1.0
    learner: str = MLP
    teacher_source: str = SAME_LEARNER
    seed: int = 0

    def __post_init__(self):
        if self.truncation_k < 0:
            raise ValueError("truncation_k must be >= 0")
        if self.kl_weight < 0 or self.temperature <= 0:
            raise ValueError("kl_weight must be >= 0 and temperature > 0")
        if self.learner not in LEARNERS:
            raise ValueError(f"unknown learner {self.learner!r}")
        if self.teacher_source not in (SAME_LEARNER, ENSEMBLE_CHAIN):
            raise ValueError(f"unknown teacher_source {self.teacher_source!r}")

    @property
    def teacher_kind(self) -> str:
        return ENSEMBLE if self.teacher_source == ENSEMBLE_CHAIN else self.learner

    def to_dict(self) -> dict:
        return {
            "truncation_k": self.truncation_k,
            "kl_weight": self.kl_weight,
            "temperature": self.temperature,
            "learner": self.learner,
            "teacher_source": self.teacher_source,
            "seed": self.seed,
        }


@dataclass
class SoftLabelMatrix:
    """A teacher's class-probability rows on one dataset."""

    model_id: str
    dataset_fingerprint: str
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[1] != 2:
            raise ValueError("soft labels must have shape (n, 2)")
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("soft label rows must be probability vectors")

    def to_payload(self) -> dict:
        return {
            "format": "latkd.softlabels",
            "version": 1,
            "model_id": self.model_id,
            "dataset_fingerprint": self.dataset_fingerprint,
            "rows": int(self.probs.shape[0]),
            "probs": encode_array(self.probs),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "SoftLabelMatrix":
        return cls(
            model_id=payload["model_id"],
            dataset_fingerprint=payload["dataset_fingerprint"],
            probs=decode_array(payload["probs"]),
        )


@dataclass
class RegistryEntry:
    frame_index: int
    kind: str
    model_hash: str
    window: dict | None = None
    config_hash: str = ""
    created_at: str = ""

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "kind": self.kind,
            "model_hash": self.model_hash,
            "window": self.window,
            "config_hash": self.config_hash,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegistryEntry":
        return cls(**d)


class TeacherRegistry:
    """Ordered chain of per-frame models, at most one per (frame, kind)."""

    def __init__(self, entries: Sequence[RegistryEntry] = ()):
        self.entries: list[RegistryEntry] = []
        for e in entries:
            self.add(e)

    def add(self, entry: RegistryEntry) -> None:
        existing = self.get(entry.frame_index, entry.kind)
        if existing is not None:
            if existing.model_hash == entry.model_hash:
                return  # idempotent re-registration (resume)
            raise TrainingError(
                f"frame {entry.frame_index} ({entry.kind}) is already registered with a "
                "different model; retraining a frame requires a new registry generation"
            )
        last = max(
            (e.frame_index for e in self.entries if e.kind == entry.kind), default=-1
        )
        if entry.frame_index <= last:
            raise TrainingError(
                f"registry frame indices must increase: got {entry.frame_index} after {last}"
            )
        self.entries.append(entry)

    def get(self, frame_index: int, kind: str) -> RegistryEntry | None:
        for e in self.entries:
            if e.frame_index == frame_index and e.kind == kind:
                return e
        return None

    def to_payload(self) -> dict:
        return {
            "format": "latkd.registry",
            "version": 1,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "TeacherRegistry":
        return cls([RegistryEntry.from_dict(d) for d in payload["entries"]])

    @property
    def registry_hash(self) -> str:
        return content_hash(strip_volatile(self.to_payload(), frozenset({"created_at"})))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(
            json.dumps(self.to_payload(), indent=2, sort_keys=True).encode()
        )

    @classmethod
    def load(cls, path: str | Path) -> "TeacherRegistry":
        return cls.from_payload(json.loads(Path(path).read_bytes()))


def teacher_set(registry: TeacherRegistry, t: int, k: int, kind: str) -> list[RegistryEntry]:
    """Registered models for frames [k, t-1], ascending; empty when k == t."""
    if not (0 <= k <= t):
        raise ValueError(f"need 0 <= K <= t, got K={k}, t={t}")
    teachers = []
    missing = []
    for i in range(k, t):
        entry = registry.get(i, kind)
        if entry is None:
            missing.append(i)
        else:
            teachers.append(entry)
    if missing:
        raise RegistryGapError(
            f"registry has no {kind!r} model for frame(s) {missing}; cannot assemble teachers"
        )
    return teachers


# ---------------------------------------------------------------------------
# soft-label cache


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    corrupt: int = 0


class SoftLabelCache:
    """Content-addressed store of teacher outputs keyed by
    (model hash, dataset fingerprint). Corrupt entries count as misses."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.stats = CacheStats()

    @staticmethod
    def key(model_id: str, dataset_fingerprint: str) -> str:
        return sha256_hex(f"{model_id}:{dataset_fingerprint}".encode())

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / key

    def get(self, model_id: str, dataset_fingerprint: str) -> SoftLabelMatrix | None:
        path = self._path(self.key(model_id, dataset_fingerprint))
        if not path.exists():
            self.stats.misses += 1
            return None
        try:
            envelope = json.loads(path.read_bytes())
            payload = envelope["payload"]
            if envelope["digest"] != content_hash(payload):
                raise ValueError("digest mismatch")
            if (
                payload["model_id"] != model_id
                or payload["dataset_fingerprint"] != dataset_fingerprint
            ):
                raise ValueError("key mismatch")
            soft = SoftLabelMatrix.from_payload(payload)
        except Exception:
            self.stats.corrupt += 1
            self.stats.misses += 1
            return None
        self.stats.hits += 1
        return soft

    def put(self, soft: SoftLabelMatrix) -> None:
        payload = soft.to_payload()
        envelope = {"payload": payload, "digest": content_hash(payload)}
        path = self._path(self.key(soft.model_id, soft.dataset_fingerprint))
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(canonical_json_bytes(envelope))


def materialize_soft_labels(
    model, frame: DesignMatrix, cache: SoftLabelCache | None = None
) -> SoftLabelMatrix:
    """Teacher outputs on a frame, served from the cache when possible.

    Cached and freshly scored results are bit-identical, so downstream
    metrics cannot depend on cache state.
    """
    ds_fp = frame.fingerprint()
    if cache is not None:
        hit = cache.get(model.model_hash, ds_fp)
        if hit is not None:
            return hit
    soft = SoftLabelMatrix(
        model_id=model.model_hash,
        dataset_fingerprint=ds_fp,
        probs=model.predict_proba(frame.features),
    )
    if cache is not None:
        cache.put(soft)
    return soft


# ---------------------------------------------------------------------------
# training one frame


@dataclass
class LearnerParams:
    """Per-learner hyperparameters (seeds inside are overridden per frame)."""

    mlp_arch: mlp_mod.MlpArchitecture | None = None
    mlp_opts: mlp_mod.TrainOptions = field(default_factory=mlp_mod.TrainOptions)
    gbt_config: gbt_mod.GbtConfig = field(default_factory=gbt_mod.GbtConfig)

    def to_dict(self) -> dict:
        return {
            "mlp_arch": self.mlp_arch.to_dict() if self.mlp_arch else None,
            "mlp_opts": {
                "epochs": self.mlp_opts.epochs,
                "early_stop": self.mlp_opts.early_stop,
                "patience": self.mlp_opts.patience,
                "val_fraction": self.mlp_opts.val_fraction,
            },
            "gbt_config": self.gbt_config.to_dict(),
        }


@dataclass
class TrainedLearner:
    model: object
    rows_consumed: int
    loss_traces: dict[str, list[float]]


def frame_seed(seed: int, t: int) -> int:
    """The effective training seed for frame ``t`` of a chain."""
    return derive_seed(seed, "frame", t)


def train_learner(
    kind: str,
    frame: DesignMatrix,
    teachers: Sequence[np.ndarray],
    params: LearnerParams,
    *,
    kl_weight: float = 1.0,
    temperature: float = 1.0,
    seed: int = 0,
) -> TrainedLearner:
    """Train one learner on one frame under the composite loss.

    This is the single code path for baseline and teacher-augmented training:
    an empty teacher list is exactly baseline training, which is what makes
    the t=0 / K=t degeneracy bit-exact.
    """
    mats = [apply_temperature(np.asarray(q, dtype=np.float64), temperature) for q in teachers]
    if kind == MLP:
        if params.mlp_arch is None:
            raise TrainingError("mlp learner needs an architecture (input width unknown)")
        model = mlp_mod.init_mlp(params.mlp_arch, seed=derive_seed(seed, "mlp"))
        spec = CompositeLossSpec(mats, kl_weight=kl_weight)
        opts = replace(params.mlp_opts, seed=derive_seed(seed, "mlp"))
        res = mlp_mod.train(model, frame, spec, opts)
        return TrainedLearner(res.model, res.rows_consumed, {"mlp": res.loss_trace})
    if kind == GBT:
        cfg = replace(params.gbt_config, seed=derive_seed(seed, "gbt"))
        res = gbt_mod.train(frame, mats, cfg, kl_weight=kl_weight)
        return TrainedLearner(res.model, res.rows_consumed, {"gbt": res.loss_trace})
    if kind == ENSEMBLE:
        sub_mlp = train_learner(
            MLP, frame, mats, params, kl_weight=kl_weight, temperature=1.0, seed=derive_seed(seed, "member-mlp")
        )
        sub_gbt = train_learner(
            GBT, frame, mats, params, kl_weight=kl_weight, temperature=1.0, seed=derive_seed(seed, "member-gbt")
        )
        model = EnsembleModel([sub_mlp.model, sub_gbt.model])
        return TrainedLearner(
            model,
            frame.n_rows,
            {**sub_mlp.loss_traces, **sub_gbt.loss_traces},
        )
    raise TrainingError(f"unknown learner kind {kind!r}")


@dataclass
class FrameResult:
    model: object
    entry: RegistryEntry
    rows_consumed: int
    n_teachers: int
    train_seconds: float
    teacher_seconds: float
    loss_traces: dict[str, list[float]]


def train_frame(
    t: int,
    frame_data: DesignMatrix,
    registry: TeacherRegistry,
    config: LatkdConfig,
    params: LearnerParams,
    *,
    store: BlobStore,
    cache: SoftLabelCache | None = None,
    window: dict | None = None,
) -> FrameResult:
    """Train the frame-``t`` model from this frame's rows plus its teachers.

    ``frame_data`` must be the single frame t — history enters only through
    the teachers' soft labels, never as rows.
    """
    k = min(config.truncation_k, t)
    entries = teacher_set(registry, t, k, config.teacher_kind)

    t0 = time.monotonic()
    teacher_mats = []
    for entry in entries:
        teacher = store.get_model(entry.model_hash)
        soft = materialize_soft_labels(teacher, frame_data, cache)
        teacher_mats.append(soft.probs)
    teacher_seconds = time.monotonic() - t0

    seed = frame_seed(config.seed, t)
    t1 = time.monotonic()
    trained = train_learner(
        config.learner,
        frame_data,
        teacher_mats,
        params,
        kl_weight=config.kl_weight,
        temperature=config.temperature,
        seed=seed,
    )
    train_seconds = time.monotonic() - t1

    model_hash = store.put_model(trained.model)
    entry = RegistryEntry(
        frame_index=t,
        kind=config.learner,
        model_hash=model_hash,
        window=window,
        config_hash=content_hash(config.to_dict()),
        created_at=dt.datetime.now(dt.timezone.utc).isoformat(),
    )
    registry.add(entry)
    return FrameResult(
        model=trained.model,
        entry=entry,
        rows_consumed=trained.rows_consumed,
        n_teachers=len(entries),
        train_seconds=train_seconds,
        teacher_seconds=teacher_seconds,
        loss_traces=trained.loss_traces,
    )


# ---------------------------------------------------------------------------
# schedules


@dataclass
class ScheduleResult:
    registry: TeacherRegistry
    manifest: RunManifest
    run_dir: Path
    frame_entries: list[dict]


def run_schedule(
    frames: Sequence[DesignMatrix],
    config: LatkdConfig,
    params: LearnerParams,
    *,
    run_root: str | Path,
    run_id: str | None = None,
    test: DesignMatrix | None = None,
) -> ScheduleResult:
    """Sequentially train the chain over ``frames``, resumably.

    Completed frames recorded in the run manifest are skipped on re-entry, so
    a crash between frames resumes into the identical final state (training is
    seeded per frame and does not depend on wall time).
    """
    run_root = Path(run_root)
    store = BlobStore(run_root)
    cache = SoftLabelCache(run_root / "cache")

    config_snapshot = {
        "latkd": config.to_dict(),
        "learner_params": params.to_dict(),
        "frame_fingerprints": [f.fingerprint() for f in frames],
        "test_fingerprint": test.fingerprint() if test is not None else None,
    }
    if run_id is None:
        run_id = "chain-" + content_hash(config_snapshot)[:12]
    run_dir = RunDir(run_root / "runs" / run_id)
    registry_path = run_dir.path / "registry.json"

    with run_dir:
        manifest = run_dir.open_manifest(run_id, config_snapshot)
        registry = (
            TeacherRegistry.load(registry_path) if registry_path.exists() else TeacherRegistry()
        )
        for t, frame in enumerate(frames):
            done = manifest.find(kind="frame", index=t)
            if done is not None:
                if not store.has(done["model_hash"]):
                    raise TrainingError(
                        f"manifest references missing model {done['model_hash']} for frame {t}"
                    )
                continue
            try:
                result = train_frame(
                    t, frame, registry, config, params, store=store, cache=cache
                )
            except Exception as exc:
                raise TrainingError(f"frame {t} failed: {exc}") from exc
            registry.save(registry_path)
            metrics = None
            if test is not None:
                if np.any(test.labels < 0):
                    raise TrainingError("test set contains unlabeled rows")
                scores = result.model.predict_proba(test.features)[:, 1]
                metrics = {
                    "auprc": average_precision(scores, test.labels),
                    "auroc": auroc(scores, test.labels),
                    "n_test": test.n_rows,
                }
            run_dir.append_entry(
                manifest,
                {
                    "kind": "frame",
                    "index": t,
                    "model_hash": result.entry.model_hash,
                    "teacher_kind": config.teacher_kind,
                    "n_teachers": result.n_teachers,
                    "rows_consumed": result.rows_consumed,
                    "metrics": metrics,
                    "train_seconds": result.train_seconds,
                    "teacher_seconds": result.teacher_seconds,
                    "created_at": result.entry.created_at,
                },
            )
    frame_entries = [e for e in manifest.entries if e.get("kind") == "frame"]
    return ScheduleResult(
        registry=registry, manifest=manifest, run_dir=run_dir.path, frame_entries=frame_entries
    )
