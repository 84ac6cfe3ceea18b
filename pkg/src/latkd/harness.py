"""Experiment harness: wiring between configs, data files, training runs,
and reports.

Three training strategies are compared over a schedule of monthly frames:

* ``cumulative`` — the conventional baseline retrained on all frames 0..t,
* ``window`` — frame t alone, no teachers,
* ``latkd`` — frame t alone plus KL terms toward the earlier frames' models.

All results land in an append-only run manifest; every table is a pure
function of that manifest, so reports regenerate bit-identically.
"""
from __future__ import annotations

import datetime as dt
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import data as data_mod
from . import distill, driftgen
from .data import DesignMatrix, concat_matrices
from .errors import ConfigError, DataError, TrainingError
from .gbt import GbtConfig
from .metrics import RunReport, average_precision, auroc, pr_curve, relative_diff
from .mlp import MlpArchitecture, TrainOptions
from .registry import BlobStore, RunDir, RunManifest
from .serialize import content_hash, derive_seed

CUMULATIVE = "cumulative"
WINDOW = "window"
LATKD = "latkd"
MODES = (CUMULATIVE, WINDOW, LATKD)


# ---------------------------------------------------------------------------
# config handling


@dataclass(frozen=True)
class VariantSpec:
    name: str
    learner: str
    mode: str
    teacher_source: str = distill.SAME_LEARNER
    truncation_k: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"variant {self.name!r}: unknown mode {self.mode!r}")
        if self.learner not in distill.LEARNERS:
            raise ConfigError(f"variant {self.name!r}: unknown learner {self.learner!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "learner": self.learner,
            "mode": self.mode,
            "teacher_source": self.teacher_source,
            "truncation_k": self.truncation_k,
        }


def load_config(path: str | Path, overrides: dict | None = None) -> dict:
    try:
        cfg = json.loads(Path(path).read_bytes())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _variants(cfg: dict) -> list[VariantSpec]:
    raw = cfg.get("variants")
    if not raw:
        raise ConfigError("config needs a non-empty 'variants' list")
    out = []
    for v in raw:
        out.append(
            VariantSpec(
                name=v["name"],
                learner=v["learner"],
                mode=v["mode"],
                teacher_source=v.get("teacher_source", distill.SAME_LEARNER),
                truncation_k=int(v.get("truncation_k", 0)),
            )
        )
    if len({v.name for v in out}) != len(out):
        raise ConfigError("variant names must be unique")
    return out


def build_learner_params(cfg: dict, input_dim: int) -> distill.LearnerParams:
    mlp_cfg = dict(cfg.get("mlp", {}))
    opts = TrainOptions(
        epochs=int(mlp_cfg.pop("epochs", 100)),
        early_stop=bool(mlp_cfg.pop("early_stop", True)),
        patience=int(mlp_cfg.pop("patience", 10)),
        val_fraction=float(mlp_cfg.pop("val_fraction", 0.1)),
    )
    if "hidden" in mlp_cfg:
        mlp_cfg["hidden"] = tuple(mlp_cfg["hidden"])
    arch = MlpArchitecture(input_dim=input_dim, **mlp_cfg)
    gbt_cfg = GbtConfig(**cfg.get("gbt", {}))
    return distill.LearnerParams(mlp_arch=arch, mlp_opts=opts, gbt_config=gbt_cfg)


def load_frames(cfg: dict, base: Path | None = None) -> tuple[list[DesignMatrix], DesignMatrix | None]:
    """Resolve the config's frame files (explicit list or a directory of
    frame_*.npz) plus the optional test matrix."""
    base = base or Path(".")

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    if "frames" in cfg:
        paths = [resolve(p) for p in cfg["frames"]]
    elif "frames_dir" in cfg:
        paths = sorted(resolve(cfg["frames_dir"]).glob("frame_*.npz"))
        if not paths:
            raise ConfigError(f"no frame_*.npz files under {cfg['frames_dir']}")
    else:
        raise ConfigError("config needs 'frames' or 'frames_dir'")
    frames = [DesignMatrix.load(p) for p in paths]
    test = DesignMatrix.load(resolve(cfg["test"])) if cfg.get("test") else None
    return frames, test


def _latkd_config(variant: VariantSpec, cfg: dict, seed: int) -> distill.LatkdConfig:
    return distill.LatkdConfig(
        truncation_k=variant.truncation_k,
        kl_weight=float(cfg.get("kl_weight", 1.0)),
        temperature=float(cfg.get("temperature", 1.0)),
        learner=variant.learner,
        teacher_source=variant.teacher_source,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# experiment


@dataclass
class ExperimentResult:
    manifest: RunManifest
    run_dir: Path
    reports: dict  # variant -> period -> RunReport


def run_experiment(cfg: dict, run_root: str | Path, base: Path | None = None) -> ExperimentResult:
    """Train every configured variant x period x seed and persist the cells.

    Cumulative variants train on frames 0..t concatenated; window and
    teacher-augmented variants train on frame t alone (enforced via the
    instrumented row counts, not assumed).
    """
    run_root = Path(run_root)
    frames, test = load_frames(cfg, base)
    if test is None:
        raise ConfigError("experiment config needs a 'test' matrix")
    variants = _variants(cfg)
    periods = [int(p) for p in cfg.get("periods", range(len(frames)))]
    if not periods or max(periods) >= len(frames) or min(periods) < 0:
        raise ConfigError("periods must be valid frame indices")
    n_runs = int(cfg.get("n_runs", 10))
    master_seed = int(cfg.get("seed", 0))
    baseline_name = cfg.get("baseline")
    if baseline_name is not None and baseline_name not in {v.name for v in variants}:
        raise ConfigError(f"baseline {baseline_name!r} is not a configured variant")

    params = build_learner_params(cfg, frames[0].width)
    config_snapshot = {
        "experiment": {
            "variants": [v.to_dict() for v in variants],
            "periods": periods,
            "n_runs": n_runs,
            "seed": master_seed,
            "baseline": baseline_name,
            "kl_weight": cfg.get("kl_weight", 1.0),
            "temperature": cfg.get("temperature", 1.0),
        },
        "learner_params": params.to_dict(),
        "frame_fingerprints": [f.fingerprint() for f in frames],
        "test_fingerprint": test.fingerprint(),
    }
    run_id = cfg.get("run_id") or ("exp-" + content_hash(config_snapshot)[:12])
    run_dir = RunDir(run_root / "runs" / run_id)
    store = BlobStore(run_root)

    with run_dir:
        manifest = run_dir.open_manifest(run_id, config_snapshot)
        for variant in variants:
            for run_idx in range(n_runs):
                seed = derive_seed(master_seed, "variant", variant.name, run_idx)
                needed = [
                    p for p in periods
                    if manifest.find(kind="cell", variant=variant.name, run=run_idx, period=p) is None
                ]
                if not needed:
                    continue
                cells = _run_variant_cells(
                    variant, frames, test, periods, params, cfg, seed, run_root, run_id, run_idx
                )
                for cell in cells:
                    if cell["period"] in needed:
                        run_dir.append_entry(manifest, cell)

    reports = build_reports(manifest)
    _write_report_files(run_dir.path, manifest, reports)
    _write_pr_points(run_dir.path, manifest, store, test)
    return ExperimentResult(manifest=manifest, run_dir=run_dir.path, reports=reports)


def _run_variant_cells(
    variant: VariantSpec,
    frames: Sequence[DesignMatrix],
    test: DesignMatrix,
    periods: list[int],
    params: distill.LearnerParams,
    cfg: dict,
    seed: int,
    run_root: Path,
    run_id: str,
    run_idx: int,
) -> list[dict]:
    cells = []
    if variant.mode == LATKD:
        chain = distill.run_schedule(
            list(frames[: max(periods) + 1]),
            _latkd_config(variant, cfg, seed),
            params,
            run_root=run_root,
            run_id=f"{run_id}-{variant.name}-r{run_idx}",
            test=test,
        )
        by_index = {e["index"]: e for e in chain.frame_entries}
        for p in periods:
            entry = by_index[p]
            if entry["rows_consumed"] != frames[p].n_rows:
                raise TrainingError(
                    f"frame-window violation: frame {p} consumed {entry['rows_consumed']} rows"
                )
            cells.append(
                {
                    "kind": "cell",
                    "variant": variant.name,
                    "run": run_idx,
                    "period": p,
                    "auprc": entry["metrics"]["auprc"],
                    "auroc": entry["metrics"]["auroc"],
                    "model_hash": entry["model_hash"],
                    "rows_consumed": entry["rows_consumed"],
                    "n_teachers": entry["n_teachers"],
                    "wall_clock_s": entry["train_seconds"],
                }
            )
        return cells

    store = BlobStore(run_root)
    for p in periods:
        if variant.mode == CUMULATIVE:
            train_data = concat_matrices(list(frames[: p + 1]))
            expected_rows = sum(f.n_rows for f in frames[: p + 1])
        else:
            train_data = frames[p]
            expected_rows = frames[p].n_rows
        t0 = time.monotonic()
        trained = distill.train_learner(
            variant.learner,
            train_data,
            [],
            params,
            kl_weight=float(cfg.get("kl_weight", 1.0)),
            seed=derive_seed(seed, variant.mode, p),
        )
        elapsed = time.monotonic() - t0
        if trained.rows_consumed != expected_rows:
            raise TrainingError(
                f"{variant.mode} variant consumed {trained.rows_consumed} rows, expected {expected_rows}"
            )
        model_hash = store.put_model(trained.model)
        scores = trained.model.predict_proba(test.features)[:, 1]
        cells.append(
            {
                "kind": "cell",
                "variant": variant.name,
                "run": run_idx,
                "period": p,
                "auprc": average_precision(scores, test.labels),
                "auroc": auroc(scores, test.labels),
                "model_hash": model_hash,
                "rows_consumed": trained.rows_consumed,
                "n_teachers": 0,
                "wall_clock_s": elapsed,
            }
        )
    return cells


def build_reports(manifest: RunManifest) -> dict:
    """variant -> period -> RunReport, straight from manifest cells."""
    exp = manifest.config["experiment"]
    reports: dict = {}
    for variant in [v["name"] for v in exp["variants"]]:
        per_period = {}
        for p in exp["periods"]:
            cells = [
                e for e in manifest.entries
                if e.get("kind") == "cell" and e["variant"] == variant and e["period"] == p
            ]
            cells.sort(key=lambda e: e["run"])
            if cells:
                per_period[p] = RunReport(
                    auprc_runs=[c["auprc"] for c in cells],
                    wall_clock_s=[c["wall_clock_s"] for c in cells],
                )
        reports[variant] = per_period
    return reports


def render_experiment_tables(manifest: RunManifest) -> str:
    exp = manifest.config["experiment"]
    reports = build_reports(manifest)
    periods = exp["periods"]
    names = [v["name"] for v in exp["variants"]]
    lines = ["AUPRC by period (mean +- std over seeded runs)", ""]
    header = ["period"] + names
    rows = []
    for p in periods:
        row = [str(p)]
        for name in names:
            rep = reports[name].get(p)
            row.append(f"{rep.mean:.4f} +- {rep.std:.4f}" if rep else "-")
        rows.append(row)
    lines.extend(_align(header, rows))

    baseline = exp.get("baseline")
    if baseline and baseline in reports:
        lines.extend(["", f"Relative AUPRC difference vs {baseline}", ""])
        others = [n for n in names if n != baseline]
        header = ["period"] + others
        rows = []
        for p in periods:
            base_rep = reports[baseline].get(p)
            row = [str(p)]
            for name in others:
                rep = reports[name].get(p)
                if rep and base_rep:
                    row.append(f"{relative_diff(rep, base_rep):+.2f}%")
                else:
                    row.append("-")
            rows.append(row)
        lines.extend(_align(header, rows))
    return "\n".join(lines) + "\n"


def _align(header: list[str], rows: list[list[str]]) -> list[str]:
    table = [header] + rows
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    return ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]


def _write_report_files(run_dir: Path, manifest: RunManifest, reports: dict) -> None:
    (run_dir / "tables.txt").write_text(render_experiment_tables(manifest))
    payload = {
        variant: {str(p): rep.to_dict() for p, rep in per_period.items()}
        for variant, per_period in reports.items()
    }
    (run_dir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    cells = [e for e in manifest.entries if e.get("kind") == "cell"]
    with open(run_dir / "cells.csv", "w") as f:
        f.write("variant,run,period,auprc,auroc,rows_consumed,n_teachers,wall_clock_s\n")
        for c in cells:
            f.write(
                f"{c['variant']},{c['run']},{c['period']},{c['auprc']!r},{c.get('auroc')!r},"
                f"{c['rows_consumed']},{c['n_teachers']},{c['wall_clock_s']!r}\n"
            )


def _write_pr_points(run_dir: Path, manifest: RunManifest, store: BlobStore, test: DesignMatrix) -> None:
    """One plot-ready PR-point CSV per variant (first run, last period)."""
    exp = manifest.config["experiment"]
    last_period = max(exp["periods"])
    for v in exp["variants"]:
        cell = manifest.find(kind="cell", variant=v["name"], run=0, period=last_period)
        if cell is None:
            continue
        model = store.get_model(cell["model_hash"])
        curve = pr_curve(model.predict_proba(test.features)[:, 1], test.labels)
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in v["name"])
        with open(run_dir / f"pr_points_{safe}.csv", "w") as f:
            f.write("threshold,recall,precision\n")
            for thr, r, p in zip(curve.thresholds, curve.recall, curve.precision):
                f.write(f"{float(thr)!r},{float(r)!r},{float(p)!r}\n")


# ---------------------------------------------------------------------------
# K sweep


def run_k_sweep(cfg: dict, t: int, run_root: str | Path, base: Path | None = None) -> dict:
    """Validation AUPRC of the frame-t model for every K in [0, t].

    Mirrors the empirical way K gets chosen in production: the chain over
    frames 0..t-1 is built once with the master seed, then one candidate
    model per K trains on frame t (fixed seed) and is scored on held-out
    future data — the config's ``validation`` matrix, defaulting to ``test``.
    K = t is exactly the no-teacher baseline.
    """
    run_root = Path(run_root)
    frames, test = load_frames(cfg, base)
    if not (0 <= t < len(frames)):
        raise ConfigError(f"frame index t={t} outside the schedule (0..{len(frames) - 1})")
    if cfg.get("validation"):
        base_dir = base or Path(".")
        val_path = Path(cfg["validation"])
        validation = DesignMatrix.load(val_path if val_path.is_absolute() else base_dir / val_path)
    elif test is not None:
        validation = test
    else:
        raise ConfigError("k-sweep needs a 'validation' (or 'test') matrix to score candidates")
    master_seed = int(cfg.get("seed", 0))
    learner = cfg.get("learner", distill.MLP)
    teacher_source = cfg.get("teacher_source", distill.SAME_LEARNER)
    params = build_learner_params(cfg, frames[0].width)

    chain_cfg = distill.LatkdConfig(
        truncation_k=0,
        kl_weight=float(cfg.get("kl_weight", 1.0)),
        temperature=float(cfg.get("temperature", 1.0)),
        learner=learner,
        teacher_source=teacher_source,
        seed=master_seed,
    )
    store = BlobStore(run_root)
    cache = distill.SoftLabelCache(run_root / "cache")
    if t > 0:
        chain = distill.run_schedule(
            list(frames[:t]), chain_cfg, params, run_root=run_root,
            run_id=f"sweep-chain-{content_hash(cfg)[:10]}",
        )
        registry = chain.registry
    else:
        registry = distill.TeacherRegistry()

    frame_t = frames[t]
    rows = []
    for k in range(t + 1):
        entries = distill.teacher_set(registry, t, k, chain_cfg.teacher_kind)
        mats = []
        for entry in entries:
            teacher = store.get_model(entry.model_hash)
            mats.append(distill.materialize_soft_labels(teacher, frame_t, cache).probs)
        trained = distill.train_learner(
            learner, frame_t, mats, params,
            kl_weight=chain_cfg.kl_weight, temperature=chain_cfg.temperature,
            seed=distill.frame_seed(master_seed, t),
        )
        scores = trained.model.predict_proba(validation.features)[:, 1]
        rows.append(
            {
                "k": k,
                "n_teachers": len(entries),
                "val_auprc": average_precision(scores, validation.labels),
            }
        )
    best = max(rows, key=lambda r: (r["val_auprc"], -r["k"]))
    return {"frame": t, "rows": rows, "best_k": best["k"]}


def render_k_sweep(result: dict) -> str:
    header = ["K", "teachers", "val_auprc"]
    rows = [
        [str(r["k"]), str(r["n_teachers"]), f"{r['val_auprc']:.4f}"] for r in result["rows"]
    ]
    lines = [f"K sweep on frame {result['frame']} (best K = {result['best_k']})", ""]
    lines.extend(_align(header, rows))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# runtime benchmark


def run_benchmark(cfg: dict, run_root: str | Path, base: Path | None = None) -> dict:
    """Wall-clock of cumulative vs window-plus-teachers training per frame.

    Timing wraps the train call only (teacher scoring is reported separately);
    row counts come from instrumentation, not timing. The chain strategy keeps
    per-frame rows constant while the cumulative strategy's grow.
    """
    run_root = Path(run_root)
    frames, _ = load_frames(cfg, base)
    if len(frames) < 4:
        raise ConfigError("benchmark needs at least 4 frames for a meaningful trend")
    reps = int(cfg.get("reps", 10))
    master_seed = int(cfg.get("seed", 0))
    learner = cfg.get("learner", distill.GBT)
    params = build_learner_params(cfg, frames[0].width)
    chain_cfg_base = {
        "kl_weight": float(cfg.get("kl_weight", 1.0)),
        "temperature": float(cfg.get("temperature", 1.0)),
        "learner": learner,
        "teacher_source": cfg.get("teacher_source", distill.SAME_LEARNER),
    }

    n = len(frames)
    latkd_times = [[] for _ in range(n)]
    latkd_teacher_times = [[] for _ in range(n)]
    cumulative_times = [[] for _ in range(n)]
    latkd_rows = [0] * n
    cumulative_rows = [0] * n

    for rep in range(reps):
        seed = derive_seed(master_seed, "bench", rep)
        chain = distill.run_schedule(
            frames,
            distill.LatkdConfig(truncation_k=0, seed=seed, **chain_cfg_base),
            params,
            run_root=run_root,
            run_id=f"bench-chain-r{rep}-{content_hash(cfg)[:8]}",
        )
        for e in chain.frame_entries:
            latkd_times[e["index"]].append(e["train_seconds"])
            latkd_teacher_times[e["index"]].append(e["teacher_seconds"])
            latkd_rows[e["index"]] = e["rows_consumed"]
        for t in range(n):
            data = concat_matrices(list(frames[: t + 1]))
            t0 = time.monotonic()
            trained = distill.train_learner(
                learner, data, [], params, seed=derive_seed(seed, "cumulative", t)
            )
            cumulative_times[t].append(time.monotonic() - t0)
            cumulative_rows[t] = trained.rows_consumed

    rows = []
    for t in range(n):
        lat_mean = float(np.mean(latkd_times[t]))
        cum_mean = float(np.mean(cumulative_times[t]))
        rows.append(
            {
                "frame": t,
                "latkd_mean_s": lat_mean,
                "latkd_std_s": float(np.std(latkd_times[t], ddof=1)) if reps > 1 else 0.0,
                "latkd_teacher_mean_s": float(np.mean(latkd_teacher_times[t])),
                "cumulative_mean_s": cum_mean,
                "cumulative_std_s": float(np.std(cumulative_times[t], ddof=1)) if reps > 1 else 0.0,
                "ratio": cum_mean / lat_mean if lat_mean > 0 else math.inf,
                "latkd_rows": latkd_rows[t],
                "cumulative_rows": cumulative_rows[t],
                "rows_ratio": cumulative_rows[t] / latkd_rows[t],
            }
        )
    result = {"reps": reps, "learner": learner, "frames": rows}
    out_dir = Path(run_root) / "benchmark"
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "runtime.csv", "w") as f:
        f.write(
            "frame,strategy,mean_s,std_s,rows\n"
        )
        for r in rows:
            f.write(f"{r['frame']},latkd,{r['latkd_mean_s']!r},{r['latkd_std_s']!r},{r['latkd_rows']}\n")
            f.write(
                f"{r['frame']},cumulative,{r['cumulative_mean_s']!r},{r['cumulative_std_s']!r},{r['cumulative_rows']}\n"
            )
    (out_dir / "runtime.json").write_text(json.dumps(result, indent=2))
    return result


def render_benchmark(result: dict) -> str:
    header = ["frame", "latkd_s", "cumulative_s", "ratio", "latkd_rows", "cumulative_rows", "rows_ratio"]
    rows = []
    for r in result["frames"]:
        rows.append(
            [
                str(r["frame"]),
                f"{r['latkd_mean_s']:.3f}",
                f"{r['cumulative_mean_s']:.3f}",
                f"{r['ratio']:.2f}x",
                str(r["latkd_rows"]),
                str(r["cumulative_rows"]),
                f"{r['rows_ratio']:.1f}x",
            ]
        )
    lines = [f"Training runtime, mean over {result['reps']} repeat(s) ({result['learner']})", ""]
    lines.extend(_align(header, rows))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# preprocessing


def _read_csv_str(path: Path, usecols=None) -> pd.DataFrame:
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, usecols=usecols)
    except pd.errors.EmptyDataError:
        raise DataError(f"input file is empty: {path}") from None
    except ValueError as exc:
        raise DataError(f"failed to read {path}: {exc}") from None


def run_preprocess(cfg: dict, out_dir: str | Path, base: Path | None = None) -> dict:
    """CSV(s) -> fitted schema + per-month design-matrix files.

    The schema is fitted on the first training month only; later months (and
    the test window) are transformed with the frozen vocabularies. Class
    counts per frame are returned and printed by the CLI.
    """
    base = base or Path(".")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    specs = [data_mod.ColumnSpec.from_dict(c) for c in cfg["columns"]]
    needed = [s.name for s in specs]
    rename = cfg.get("rename", {})
    raw_needed = [next((k for k, v in rename.items() if v == c), c) for c in needed]

    ts_col = cfg["timestamp_column"]
    label_col = cfg.get("label_column")
    usecols_main = list(dict.fromkeys(raw_needed + [ts_col] + ([label_col] if label_col else [])))

    identity_path = cfg.get("identity_input")
    if identity_path:
        join_key = cfg.get("join_key", "TransactionID")
        main_cols = [c for c in usecols_main if c not in cfg.get("identity_columns", [])]
        df = _read_csv_str(resolve(cfg["input"]), usecols=main_cols + [join_key])
        ident_cols = [c for c in usecols_main if c in cfg.get("identity_columns", [])]
        ident = _read_csv_str(resolve(identity_path), usecols=ident_cols + [join_key])
        df = df.merge(ident, how="left", on=join_key).drop(columns=[join_key])
        df = df.fillna("")
    else:
        df = _read_csv_str(resolve(cfg["input"]), usecols=usecols_main)
    df = df.rename(columns=rename)

    table = data_mod.table_from_dataframe(
        df,
        timestamp_column=ts_col,
        label_column=label_col,
        timestamp_offset=float(cfg.get("timestamp_offset", 0.0)),
        source=str(cfg["input"]),
    )

    delay = int(cfg.get("label_delay_days", 0))
    train_months = cfg["train_months"]
    test_months = cfg.get("test_months", [])
    schedule = data_mod.monthly_schedule(train_months[0], len(train_months), delay)
    for frame, month in zip(schedule, train_months):
        if frame.start != data_mod._parse_month(month):
            raise ConfigError("train_months must be contiguous calendar months")
    epoch = data_mod._parse_month(cfg.get("epoch_month", train_months[0]))

    as_of = cfg.get("as_of")
    if as_of:
        as_of_date = dt.date.fromisoformat(as_of)
        unavailable = [f for f in schedule if not f.labeled_available(as_of_date)]
        if unavailable:
            raise ConfigError(
                f"label delay of {delay} days leaves month(s) "
                f"{[f.start.isoformat() for f in unavailable]} unlabeled as of {as_of}"
            )

    first_month_rows = data_mod.table_rows_in(table, schedule[0], epoch)
    if first_month_rows.n_rows == 0:
        raise DataError("the schema-fitting month contains no rows")
    schema = data_mod.fit_schema(first_month_rows, specs)
    schema.save(out_dir / "schema.json")

    matrix = data_mod.transform(table, schema)
    sliced = data_mod.slice_frames(matrix, schedule, epoch)
    counts = []
    for t, frame in enumerate(sliced.frames):
        labeled = frame.labeled_only()
        labeled.save(out_dir / f"frame_{t:03d}.npz")
        neg, pos = labeled.class_counts()
        counts.append({"frame": t, "month": train_months[t], "nonfraud": neg, "fraud": pos})

    test_counts = None
    if test_months:
        test_schedule = data_mod.monthly_schedule(test_months[0], len(test_months), delay)
        test_sliced = data_mod.slice_frames(matrix, test_schedule, epoch)
        test = concat_matrices(test_sliced.frames).labeled_only()
        test.save(out_dir / "test.npz")
        neg, pos = test.class_counts()
        test_counts = {"months": test_months, "nonfraud": neg, "fraud": pos}

    summary = {
        "frames": counts,
        "test": test_counts,
        "dropped_rows": sliced.dropped,
        "schema_fingerprint": schema.fingerprint,
        "output_dimension": schema.output_dimension,
    }
    (out_dir / "preprocess_summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def render_preprocess(summary: dict) -> str:
    header = ["frame", "month", "nonfraud", "fraud"]
    rows = [
        [str(c["frame"]), c["month"], str(c["nonfraud"]), str(c["fraud"])]
        for c in summary["frames"]
    ]
    cum_non = np.cumsum([c["nonfraud"] for c in summary["frames"]])
    cum_fraud = np.cumsum([c["fraud"] for c in summary["frames"]])
    lines = ["Per-frame training class counts", ""]
    lines.extend(_align(header, rows))
    lines.append("")
    lines.append("Cumulative training counts per period")
    lines.append("")
    rows = [
        [str(i + 1), str(int(cn)), str(int(cf))]
        for i, (cn, cf) in enumerate(zip(cum_non, cum_fraud))
    ]
    lines.extend(_align(["period", "nonfraud", "fraud"], rows))
    if summary["test"]:
        t = summary["test"]
        lines.append("")
        lines.append(f"Test window {t['months']}: {t['nonfraud']} nonfraud / {t['fraud']} fraud")
    lines.append("")
    lines.append(f"dropped rows outside schedule: {summary['dropped_rows']}")
    lines.append(f"feature dimension: {summary['output_dimension']}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# synthetic generation


def run_generate(scenario_path: str | Path, out_dir: str | Path) -> dict:
    """Materialize a drift scenario to CSVs (ingestion layout) and ready-to-use
    design-matrix files."""
    scenario = driftgen.DriftScenario.load(scenario_path)
    stream = driftgen.generate(scenario)
    out_dir = Path(out_dir)
    driftgen.write_frames_csv(stream, out_dir)
    for t, frame in enumerate(stream.frames):
        frame.save(out_dir / f"frame_{t:03d}.npz")
    return {
        "frames": scenario.n_frames,
        "rows_per_frame": scenario.rows_per_frame,
        "feature_dim": scenario.feature_dim,
        "out_dir": str(out_dir),
    }


# ---------------------------------------------------------------------------
# report regeneration


def run_report(run_dir: str | Path) -> str:
    run_dir = Path(run_dir)
    manifest = RunDir(run_dir).load_manifest()
    if manifest is None:
        raise ConfigError(f"no manifest found under {run_dir}")
    if "experiment" in manifest.config:
        return render_experiment_tables(manifest)
    lines = [f"run {manifest.run_id}: {len(manifest.entries)} entries"]
    for e in manifest.entries:
        lines.append(json.dumps(e, sort_keys=True))
    return "\n".join(lines) + "\n"
