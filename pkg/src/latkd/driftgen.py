"""Synthetic concept-drift stream generator.

Monthly frames are drawn from Gaussian-mixture normal and anomalous clusters
whose composition shifts over time (clusters move, appear, retire, and can
recur), with a per-row assignment log so cluster-level detection can be
audited exactly. Desk-scale stand-in for a drifting fraud feed.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DesignMatrix, monthly_schedule
from .errors import ConfigError
from .serialize import content_hash, seeded_rng

SHIFT = "shift_cluster"
ADD = "add_cluster"
RETIRE = "retire_cluster"
REINTRODUCE = "reintroduce_cluster"


@dataclass
class ClusterSpec:
    mean: np.ndarray
    var: np.ndarray  # diagonal covariance
    weight: float = 1.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape:
            raise ConfigError("cluster mean and var must have the same dimension")
        if np.any(self.var <= 0):
            raise ConfigError("cluster variances must be positive")
        if self.weight <= 0:
            raise ConfigError("cluster weight must be positive")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "var": self.var.tolist(), "weight": self.weight}

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterSpec":
        return cls(mean=d["mean"], var=d["var"], weight=d.get("weight", 1.0))


@dataclass
class DriftEvent:
    frame_index: int
    action: str
    cluster: str
    shift: np.ndarray | None = None  # for shift_cluster
    spec: ClusterSpec | None = None  # for add_cluster
    side: str = "fraud"  # for add_cluster: which class the new cluster joins

    def __post_init__(self):
        if self.action not in (SHIFT, ADD, RETIRE, REINTRODUCE):
            raise ConfigError(f"unknown drift action {self.action!r}")
        if self.action == SHIFT and self.shift is None:
            raise ConfigError("shift_cluster needs a shift vector")
        if self.action == ADD and self.spec is None:
            raise ConfigError("add_cluster needs a cluster spec")
        if self.side not in ("fraud", "normal"):
            raise ConfigError(f"unknown cluster side {self.side!r}")
        if self.shift is not None:
            self.shift = np.asarray(self.shift, dtype=np.float64)

    def to_dict(self) -> dict:
        out = {"frame_index": self.frame_index, "action": self.action, "cluster": self.cluster}
        if self.shift is not None:
            out["shift"] = self.shift.tolist()
        if self.spec is not None:
            out["spec"] = self.spec.to_dict()
            out["side"] = self.side
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DriftEvent":
        return cls(
            frame_index=d["frame_index"],
            action=d["action"],
            cluster=d["cluster"],
            shift=d.get("shift"),
            spec=ClusterSpec.from_dict(d["spec"]) if d.get("spec") else None,
            side=d.get("side", "fraud"),
        )


@dataclass
class DriftScenario:
    n_frames: int
    rows_per_frame: int
    fraud_rate: float
    feature_dim: int
    normal_components: dict[str, ClusterSpec]
    fraud_components: dict[str, ClusterSpec]
    drift_events: list[DriftEvent] = field(default_factory=list)
    recurrence: dict | None = None  # {"frame_index": int, "cluster": str}
    seed: int = 0
    start_month: str = "2017-11"

    def __post_init__(self):
        if self.n_frames < 1 or self.rows_per_frame < 1:
            raise ConfigError("scenario needs at least one frame and one row per frame")
        if not (0.0 < self.fraud_rate < 0.5):
            raise ConfigError("fraud_rate must lie in (0, 0.5)")
        names = set(self.normal_components) | set(self.fraud_components)
        if len(names) != len(self.normal_components) + len(self.fraud_components):
            raise ConfigError("cluster names must be unique across classes")
        for spec in list(self.normal_components.values()) + list(self.fraud_components.values()):
            if spec.mean.shape[0] != self.feature_dim:
                raise ConfigError("cluster dimension does not match feature_dim")
        for ev in self.all_events():
            if not (0 <= ev.frame_index < self.n_frames):
                raise ConfigError(f"drift event targets frame {ev.frame_index} outside the schedule")

    def all_events(self) -> list[DriftEvent]:
        events = list(self.drift_events)
        if self.recurrence is not None:
            events.append(
                DriftEvent(
                    frame_index=self.recurrence["frame_index"],
                    action=REINTRODUCE,
                    cluster=self.recurrence["cluster"],
                )
            )
        return sorted(events, key=lambda e: e.frame_index)

    def to_dict(self) -> dict:
        return {
            "n_frames": self.n_frames,
            "rows_per_frame": self.rows_per_frame,
            "fraud_rate": self.fraud_rate,
            "feature_dim": self.feature_dim,
            "normal_components": {k: v.to_dict() for k, v in self.normal_components.items()},
            "fraud_components": {k: v.to_dict() for k, v in self.fraud_components.items()},
            "drift_events": [e.to_dict() for e in self.drift_events],
            "recurrence": self.recurrence,
            "seed": self.seed,
            "start_month": self.start_month,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DriftScenario":
        return cls(
            n_frames=d["n_frames"],
            rows_per_frame=d["rows_per_frame"],
            fraud_rate=d["fraud_rate"],
            feature_dim=d["feature_dim"],
            normal_components={k: ClusterSpec.from_dict(v) for k, v in d["normal_components"].items()},
            fraud_components={k: ClusterSpec.from_dict(v) for k, v in d["fraud_components"].items()},
            drift_events=[DriftEvent.from_dict(e) for e in d.get("drift_events", [])],
            recurrence=d.get("recurrence"),
            seed=d.get("seed", 0),
            start_month=d.get("start_month", "2017-11"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "DriftScenario":
        return cls.from_dict(json.loads(Path(path).read_bytes()))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(json.dumps(self.to_dict(), indent=2).encode())


@dataclass
class GeneratedStream:
    frames: list[DesignMatrix]
    assignments: list[np.ndarray]  # per frame: cluster name per row
    scenario: DriftScenario

    def cluster_mask(self, frame_index: int, cluster: str) -> np.ndarray:
        return self.assignments[frame_index] == cluster


def _sample_class(
    rng: np.random.Generator,
    active: dict[str, ClusterSpec],
    count: int,
    dim: int,
) -> tuple[np.ndarray, list[str]]:
    names = sorted(active)
    weights = np.array([active[n].weight for n in names], dtype=np.float64)
    weights = weights / weights.sum()
    counts = rng.multinomial(count, weights)
    rows = np.empty((count, dim))
    labels: list[str] = []
    at = 0
    for name, k in zip(names, counts):
        spec = active[name]
        rows[at : at + k] = spec.mean + np.sqrt(spec.var) * rng.standard_normal((k, dim))
        labels.extend([name] * k)
        at += k
    return rows, labels


def generate(scenario: DriftScenario) -> GeneratedStream:
    """Materialize every frame of a scenario, deterministically per seed.

    Drift events apply at the start of their frame. The assignment log holds
    the generating cluster of every row, enabling exact audits of which
    patterns a model caught.
    """
    normal_active = {k: ClusterSpec(v.mean.copy(), v.var.copy(), v.weight) for k, v in scenario.normal_components.items()}
    fraud_active = {k: ClusterSpec(v.mean.copy(), v.var.copy(), v.weight) for k, v in scenario.fraud_components.items()}
    retired: dict[str, tuple[str, ClusterSpec]] = {}
    events_by_frame: dict[int, list[DriftEvent]] = {}
    for ev in scenario.all_events():
        events_by_frame.setdefault(ev.frame_index, []).append(ev)

    schedule = monthly_schedule(scenario.start_month, scenario.n_frames)
    epoch = schedule[0].start
    scenario_fp = "driftgen:" + content_hash(scenario.to_dict())

    frames: list[DesignMatrix] = []
    assignments: list[np.ndarray] = []
    for t in range(scenario.n_frames):
        for ev in events_by_frame.get(t, []):
            side = "fraud" if ev.cluster in fraud_active or retired.get(ev.cluster, ("",))[0] == "fraud" else "normal"
            pool = fraud_active if side == "fraud" else normal_active
            if ev.action == SHIFT:
                if ev.cluster not in pool:
                    raise ConfigError(f"frame {t}: cannot shift unknown/retired cluster {ev.cluster!r}")
                spec = pool[ev.cluster]
                pool[ev.cluster] = ClusterSpec(spec.mean + ev.shift, spec.var, spec.weight)
            elif ev.action == RETIRE:
                if ev.cluster not in pool:
                    raise ConfigError(f"frame {t}: cannot retire unknown cluster {ev.cluster!r}")
                retired[ev.cluster] = (side, pool.pop(ev.cluster))
            elif ev.action == REINTRODUCE:
                if ev.cluster not in retired:
                    raise ConfigError(f"frame {t}: cluster {ev.cluster!r} was never retired")
                side, spec = retired.pop(ev.cluster)
                (fraud_active if side == "fraud" else normal_active)[ev.cluster] = spec
            elif ev.action == ADD:
                if ev.cluster in fraud_active or ev.cluster in normal_active:
                    raise ConfigError(f"frame {t}: cluster {ev.cluster!r} already active")
                (fraud_active if ev.side == "fraud" else normal_active)[ev.cluster] = ev.spec

        if not fraud_active and scenario.fraud_rate > 0:
            raise ConfigError(
                f"frame {t}: every anomalous cluster is retired but fraud_rate > 0"
            )
        if not normal_active:
            raise ConfigError(f"frame {t}: no normal clusters are active")

        rng = seeded_rng(scenario.seed, "frame", t)
        n_fraud = int(round(scenario.rows_per_frame * scenario.fraud_rate))
        n_normal = scenario.rows_per_frame - n_fraud
        x_norm, c_norm = _sample_class(rng, normal_active, n_normal, scenario.feature_dim)
        x_fraud, c_fraud = _sample_class(rng, fraud_active, n_fraud, scenario.feature_dim)
        X = np.concatenate([x_norm, x_fraud], axis=0)
        y = np.concatenate([np.zeros(n_normal, dtype=np.int8), np.ones(n_fraud, dtype=np.int8)])
        clusters = np.array(c_norm + c_fraud, dtype=object)

        frame = schedule[t]
        lo = float((frame.start - epoch).days) * 86400.0
        hi = float((frame.end - epoch).days) * 86400.0
        times = lo + rng.random(scenario.rows_per_frame) * (hi - lo)

        perm = rng.permutation(scenario.rows_per_frame)
        frames.append(
            DesignMatrix(
                features=X[perm],
                labels=y[perm],
                event_time=times[perm],
                schema_fingerprint=scenario_fp,
            )
        )
        assignments.append(clusters[perm])
    return GeneratedStream(frames=frames, assignments=assignments, scenario=scenario)


# ---------------------------------------------------------------------------
# CSV export (same layout the ingestion module reads back)


def feature_columns(dim: int) -> list[str]:
    return [f"f{i}" for i in range(dim)]


def write_frames_csv(stream: GeneratedStream, out_dir: str | Path) -> list[Path]:
    """One CSV per frame (features, event_time, label) plus the assignment log
    and a scenario snapshot. Floats are written with full round-trip precision."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = feature_columns(stream.scenario.feature_dim)
    paths = []
    for t, frame in enumerate(stream.frames):
        path = out_dir / f"frame_{t:03d}.csv"
        with open(path, "w") as f:
            f.write(",".join(cols + ["event_time", "label"]) + "\n")
            for i in range(frame.n_rows):
                cells = [repr(float(v)) for v in frame.features[i]]
                cells.append(repr(float(frame.event_time[i])))
                cells.append(str(int(frame.labels[i])))
                f.write(",".join(cells) + "\n")
        paths.append(path)
    with open(out_dir / "assignments.csv", "w") as f:
        f.write("frame,row,cluster,label\n")
        for t, (frame, clusters) in enumerate(zip(stream.frames, stream.assignments)):
            for i in range(frame.n_rows):
                f.write(f"{t},{i},{clusters[i]},{int(frame.labels[i])}\n")
    stream.scenario.save(out_dir / "scenario.json")
    return paths
