"""Tabular ingestion, feature preprocessing, and time-frame slicing.

Raw CSV rows become a ``DataFrameTable`` (typed cells + event times + optional
labels), a ``FeatureSchema`` is fitted once on a designated window, and
``transform`` produces the dense ``DesignMatrix`` consumed by every learner.
``slice_frames`` partitions a matrix into contiguous calendar frames.
"""
from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError
from .serialize import content_hash

log = logging.getLogger(__name__)

OTHERS_BUCKET = "Others"
NA_BUCKET = "NA"

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

_TRANSFORMS = ("log10p", "none")

# A label of -1 marks a row whose label is absent (e.g. inside the label delay).
UNLABELED = -1


# ---------------------------------------------------------------------------
# column specs and schema


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    transform: str = "none"
    null_sentinel: float | None = None
    rare_threshold: int | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"column {self.name}: unknown kind {self.kind!r}")
        if self.transform not in _TRANSFORMS:
            raise SchemaError(f"column {self.name}: unknown transform {self.transform!r}")
        if self.kind == CATEGORICAL and self.null_sentinel is not None:
            raise SchemaError(f"column {self.name}: null_sentinel applies to continuous columns only")
        if self.kind == CONTINUOUS and self.rare_threshold is not None:
            raise SchemaError(f"column {self.name}: rare_threshold applies to categorical columns only")
        if self.kind == CATEGORICAL and self.transform != "none":
            raise SchemaError(f"column {self.name}: categorical columns take no numeric transform")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "transform": self.transform,
            "null_sentinel": self.null_sentinel,
            "rare_threshold": self.rare_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSpec":
        return cls(
            name=d["name"],
            kind=d["kind"],
            transform=d.get("transform", "none"),
            null_sentinel=d.get("null_sentinel"),
            rare_threshold=d.get("rare_threshold"),
        )


@dataclass(frozen=True)
class FeatureSchema:
    """Fitted preprocessing state: column specs plus frozen vocabularies."""

    columns: tuple[ColumnSpec, ...]
    vocabularies: dict[str, tuple[str, ...]]

    @property
    def output_dimension(self) -> int:
        dim = 0
        for spec in self.columns:
            dim += 1 if spec.kind == CONTINUOUS else len(self.vocabularies[spec.name])
        return dim

    def feature_names(self) -> list[str]:
        names: list[str] = []
        for spec in self.columns:
            if spec.kind == CONTINUOUS:
                names.append(spec.name)
            else:
                names.extend(f"{spec.name}={cat}" for cat in self.vocabularies[spec.name])
        return names

    def to_payload(self) -> dict:
        return {
            "format": "latkd.schema",
            "version": 1,
            "columns": [c.to_dict() for c in self.columns],
            "vocabularies": {k: list(v) for k, v in self.vocabularies.items()},
        }

    @property
    def fingerprint(self) -> str:
        return content_hash(self.to_payload())

    def to_json_bytes(self) -> bytes:
        payload = self.to_payload()
        payload["fingerprint"] = self.fingerprint
        return json.dumps(payload, indent=2, sort_keys=True).encode("utf-8")

    @classmethod
    def from_json_bytes(cls, raw: bytes) -> "FeatureSchema":
        payload = json.loads(raw)
        if payload.get("format") != "latkd.schema":
            raise SchemaError("not a schema document")
        schema = cls(
            columns=tuple(ColumnSpec.from_dict(c) for c in payload["columns"]),
            vocabularies={k: tuple(v) for k, v in payload["vocabularies"].items()},
        )
        stored = payload.get("fingerprint")
        if stored is not None and stored != schema.fingerprint:
            raise SchemaError("schema fingerprint mismatch: document was altered")
        return schema

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_json_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "FeatureSchema":
        return cls.from_json_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# tables


@dataclass
class DataFrameTable:
    """Parsed raw rows: per-column object arrays (float | str | None), row
    event times in seconds since the dataset epoch, and optional labels."""

    columns: dict[str, np.ndarray]
    event_time: np.ndarray
    labels: np.ndarray  # int8; UNLABELED where absent

    def __post_init__(self):
        n = self.event_time.shape[0]
        if self.labels.shape[0] != n:
            raise DataError("labels and event_time disagree on row count")
        for name, col in self.columns.items():
            if col.shape[0] != n:
                raise DataError(f"column {name} has {col.shape[0]} rows, expected {n}")
        if n and (not np.all(np.isfinite(self.event_time)) or np.any(self.event_time < 0)):
            raise DataError("event_time must be nonnegative and finite for every row")

    @property
    def n_rows(self) -> int:
        return int(self.event_time.shape[0])

    def select(self, mask: np.ndarray) -> "DataFrameTable":
        return DataFrameTable(
            columns={k: v[mask] for k, v in self.columns.items()},
            event_time=self.event_time[mask],
            labels=self.labels[mask],
        )


def _parse_cells(series: pd.Series) -> np.ndarray:
    """Cells become float where they parse as finite numbers, None where the
    cell is empty, and stay strings otherwise.

    pandas detects which cells are numeric but its fast parser is not
    correctly rounded; the actual values come from numpy's string conversion,
    which round-trips repr(float) exactly.
    """
    raw = series.astype(object).to_numpy()
    out = raw.copy()
    is_null = series.isna().to_numpy() | (raw == "")
    numeric = pd.to_numeric(series, errors="coerce").to_numpy(dtype=np.float64)
    is_num = np.isfinite(numeric) & ~is_null
    if is_num.any():
        out[is_num] = np.asarray(raw[is_num], dtype=np.float64).astype(object)
    out[is_null] = None
    return out


def table_from_dataframe(
    df: pd.DataFrame,
    timestamp_column: str,
    label_column: str | None = None,
    timestamp_offset: float = 0.0,
    source: str = "<dataframe>",
) -> DataFrameTable:
    """Build a table from a string-typed dataframe (the CSV loader's core,
    exposed so callers can pre-join multiple files first)."""
    if df.shape[0] == 0:
        raise DataError(f"input file has a header but no rows: {source}")
    if timestamp_column not in df.columns:
        raise DataError(f"configured timestamp column {timestamp_column!r} is missing from {source}")
    probe = pd.to_numeric(df[timestamp_column], errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(probe)
    if bad.any():
        row = int(np.nonzero(bad)[0][0])
        raise DataError(f"timestamp column {timestamp_column!r} row {row} is not numeric")
    ts = np.asarray(df[timestamp_column].to_numpy(dtype=object), dtype=np.float64)
    ts = ts + timestamp_offset
    if np.any(ts < 0):
        row = int(np.nonzero(ts < 0)[0][0])
        raise DataError(f"timestamp column {timestamp_column!r} row {row} is negative after offset")

    n = df.shape[0]
    labels = np.full(n, UNLABELED, dtype=np.int8)
    if label_column is not None and label_column in df.columns:
        lab = pd.to_numeric(df[label_column], errors="coerce").to_numpy(dtype=np.float64)
        present = np.isfinite(lab)
        vals = lab[present]
        if np.any((vals != 0.0) & (vals != 1.0)):
            raise DataError(f"label column {label_column!r} contains values outside {{0, 1}}")
        labels[present] = vals.astype(np.int8)

    feature_names = [c for c in df.columns if c not in (timestamp_column, label_column)]
    cols = {name: _parse_cells(df[name]) for name in feature_names}
    return DataFrameTable(columns=cols, event_time=ts, labels=labels)


def load_table(
    path: str | Path,
    timestamp_column: str,
    label_column: str | None = None,
    columns: Sequence[str] | None = None,
    timestamp_offset: float = 0.0,
) -> DataFrameTable:
    """Load a CSV into a table.

    ``columns`` limits which feature columns are materialized (the timestamp
    and label columns are always read). ``timestamp_offset`` is added to the
    raw timestamp so datasets whose clock does not start at the epoch can be
    aligned (e.g. a feed whose first day is second 86400).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")

    usecols = None
    if columns is not None:
        usecols = list(dict.fromkeys([*columns, timestamp_column] + ([label_column] if label_column else [])))
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, usecols=usecols)
    except pd.errors.EmptyDataError:
        raise DataError(f"input file is empty: {path}") from None
    except ValueError as exc:
        raise DataError(f"failed to read {path}: {exc}") from None
    return table_from_dataframe(
        df, timestamp_column, label_column, timestamp_offset, source=str(path)
    )


# ---------------------------------------------------------------------------
# schema fitting


def _category_str(cell) -> str:
    """Canonical category string for a parsed cell (floats that are integral
    print without a trailing .0 so '2' and '2.0' collapse)."""
    if isinstance(cell, str):
        return cell
    v = float(cell)
    if v.is_integer():
        return str(int(v))
    return repr(v)


def fit_schema(table: DataFrameTable, specs: Sequence[ColumnSpec]) -> FeatureSchema:
    """Fit vocabularies on ``table``.

    Categorical vocabularies keep categories at or above the column's
    rare_threshold (descending frequency, ties lexicographic), then an
    ``Others`` bucket if anything was collapsed, then an ``NA`` bucket if any
    null was seen. Vocabularies are frozen — transform never mutates them.
    """
    vocabularies: dict[str, tuple[str, ...]] = {}
    for spec in specs:
        if spec.name not in table.columns:
            raise SchemaError(f"column {spec.name!r} not present in table")
        col = table.columns[spec.name]
        if spec.kind == CONTINUOUS:
            for i, cell in enumerate(col):
                if cell is not None and isinstance(cell, str):
                    raise SchemaError(
                        f"continuous column {spec.name!r} row {i} has non-numeric value {cell!r}"
                    )
            continue
        counts: dict[str, int] = {}
        saw_null = False
        for cell in col:
            if cell is None:
                saw_null = True
                continue
            key = _category_str(cell)
            counts[key] = counts.get(key, 0) + 1
        if spec.rare_threshold is not None:
            kept = {k: c for k, c in counts.items() if c >= spec.rare_threshold}
            collapsed = len(kept) < len(counts)
        else:
            kept = counts
            collapsed = False
        vocab = sorted(kept, key=lambda k: (-kept[k], k))
        if collapsed:
            vocab.append(OTHERS_BUCKET)
        if saw_null:
            vocab.append(NA_BUCKET)
        if not vocab:
            raise SchemaError(f"categorical column {spec.name!r} fitted an empty vocabulary")
        vocabularies[spec.name] = tuple(vocab)
    return FeatureSchema(columns=tuple(specs), vocabularies=vocabularies)


# ---------------------------------------------------------------------------
# design matrices


@dataclass
class DesignMatrix:
    """Dense numeric features with aligned labels and event times."""

    features: np.ndarray
    labels: np.ndarray
    event_time: np.ndarray
    schema_fingerprint: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.event_time = np.asarray(self.event_time, dtype=np.float64)
        n = self.features.shape[0]
        if self.labels.shape[0] != n or self.event_time.shape[0] != n:
            raise DataError("features, labels and event_time disagree on row count")
        if n and not np.all(np.isfinite(self.features)):
            raise DataError("design matrix contains NaN or infinite entries")

    @property
    def n_rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def width(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> tuple[int, int]:
        """(negatives, positives) among labeled rows."""
        return int(np.sum(self.labels == 0)), int(np.sum(self.labels == 1))

    def labeled_only(self) -> "DesignMatrix":
        mask = self.labels != UNLABELED
        return self.select(mask)

    def select(self, idx) -> "DesignMatrix":
        return DesignMatrix(
            features=self.features[idx],
            labels=self.labels[idx],
            event_time=self.event_time[idx],
            schema_fingerprint=self.schema_fingerprint,
        )

    def fingerprint(self) -> str:
        from .serialize import encode_array

        return content_hash(
            {
                "features": encode_array(self.features),
                "labels": encode_array(self.labels),
                "event_time": encode_array(self.event_time),
                "schema": self.schema_fingerprint,
            }
        )

    def save(self, path: str | Path) -> None:
        np.savez_compressed(
            path,
            features=self.features,
            labels=self.labels,
            event_time=self.event_time,
            schema_fingerprint=np.array(self.schema_fingerprint),
        )

    @classmethod
    def load(cls, path: str | Path) -> "DesignMatrix":
        with np.load(path, allow_pickle=False) as z:
            return cls(
                features=z["features"],
                labels=z["labels"],
                event_time=z["event_time"],
                schema_fingerprint=str(z["schema_fingerprint"]),
            )


def concat_matrices(parts: Sequence[DesignMatrix]) -> DesignMatrix:
    if not parts:
        raise DataError("cannot concatenate zero matrices")
    fp = parts[0].schema_fingerprint
    if any(p.schema_fingerprint != fp for p in parts):
        raise DataError("cannot concatenate matrices from different schemas")
    return DesignMatrix(
        features=np.concatenate([p.features for p in parts], axis=0),
        labels=np.concatenate([p.labels for p in parts]),
        event_time=np.concatenate([p.event_time for p in parts]),
        schema_fingerprint=fp,
    )


def transform(table: DataFrameTable, schema: FeatureSchema) -> DesignMatrix:
    """Encode a table with a fitted schema.

    Continuous columns pass through their transform (log10p emits
    log10(1 + x)); nulls emit the column's sentinel. Categorical cells one-hot
    over the frozen vocabulary; unseen categories fall into ``Others`` when
    that bucket exists, else ``NA``.
    """
    n = table.n_rows
    out = np.empty((n, schema.output_dimension), dtype=np.float64)
    offset = 0
    for spec in schema.columns:
        if spec.name not in table.columns:
            raise SchemaError(f"column {spec.name!r} not present in table")
        col = table.columns[spec.name]
        if spec.kind == CONTINUOUS:
            vals = np.full(n, np.nan)
            null_mask = np.zeros(n, dtype=bool)
            for i, cell in enumerate(col):
                if cell is None:
                    null_mask[i] = True
                elif isinstance(cell, str):
                    raise SchemaError(
                        f"continuous column {spec.name!r} row {i} has non-numeric value {cell!r}"
                    )
                else:
                    vals[i] = cell
            if spec.transform == "log10p":
                neg = (~null_mask) & (vals < 0)
                if neg.any():
                    row = int(np.nonzero(neg)[0][0])
                    raise SchemaError(
                        f"column {spec.name!r} row {row}: log10p is undefined for negative value {vals[row]}"
                    )
                with np.errstate(invalid="ignore"):
                    vals = np.log10(1.0 + vals)
            if null_mask.any():
                if spec.null_sentinel is None:
                    row = int(np.nonzero(null_mask)[0][0])
                    raise SchemaError(
                        f"continuous column {spec.name!r} row {row} is null but no null_sentinel is configured"
                    )
                vals[null_mask] = spec.null_sentinel
            out[:, offset] = vals
            offset += 1
        else:
            vocab = schema.vocabularies[spec.name]
            index = {cat: j for j, cat in enumerate(vocab)}
            block = np.zeros((n, len(vocab)))
            for i, cell in enumerate(col):
                if cell is None:
                    key = NA_BUCKET
                else:
                    key = _category_str(cell)
                j = index.get(key)
                if j is None:
                    if OTHERS_BUCKET in index:
                        j = index[OTHERS_BUCKET]
                    elif NA_BUCKET in index:
                        j = index[NA_BUCKET]
                    else:
                        raise SchemaError(
                            f"categorical column {spec.name!r} row {i}: unseen category "
                            f"{key!r} and the vocabulary has no Others/NA bucket"
                        )
                block[i, j] = 1.0
            out[:, offset : offset + len(vocab)] = block
            offset += len(vocab)
    return DesignMatrix(
        features=out,
        labels=table.labels.copy(),
        event_time=table.event_time.copy(),
        schema_fingerprint=schema.fingerprint,
    )


# ---------------------------------------------------------------------------
# time frames


@dataclass(frozen=True)
class TimeFrame:
    """Half-open calendar window [start, end), indexed within a schedule."""

    index: int
    start: dt.date
    end: dt.date
    label_delay_days: int = 0

    def __post_init__(self):
        if self.index < 0:
            raise DataError("frame index must be >= 0")
        if self.start >= self.end:
            raise DataError(f"frame {self.index}: start {self.start} not before end {self.end}")
        if self.label_delay_days < 0:
            raise DataError("label_delay_days must be >= 0")

    def labeled_available(self, as_of: dt.date) -> bool:
        """True when every row's label has had time to arrive by ``as_of``."""
        return self.end + dt.timedelta(days=self.label_delay_days) <= as_of

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "start": self.start.isoformat(),
            "end": self.end.isoformat(),
            "label_delay_days": self.label_delay_days,
        }


def _parse_month(month: str) -> dt.date:
    try:
        year, mon = month.split("-")
        return dt.date(int(year), int(mon), 1)
    except Exception:
        raise DataError(f"month must look like 'YYYY-MM', got {month!r}") from None


def _next_month(d: dt.date) -> dt.date:
    return dt.date(d.year + (d.month == 12), d.month % 12 + 1, 1)


def monthly_schedule(
    first_month: str, n_months: int, label_delay_days: int = 0, index_start: int = 0
) -> list[TimeFrame]:
    """Contiguous calendar-month frames starting at ``first_month`` (YYYY-MM)."""
    if n_months < 1:
        raise DataError("schedule needs at least one month")
    start = _parse_month(first_month)
    frames = []
    for i in range(n_months):
        end = _next_month(start)
        frames.append(TimeFrame(index_start + i, start, end, label_delay_days))
        start = end
    return frames


def available_frames(schedule: Sequence[TimeFrame], as_of: dt.date) -> list[TimeFrame]:
    """Frames whose labels are complete at the given wall date."""
    return [f for f in schedule if f.labeled_available(as_of)]


@dataclass
class SliceResult:
    frames: list[DesignMatrix]
    dropped: int
    empty_frames: int


def slice_frames(
    matrix: DesignMatrix, schedule: Sequence[TimeFrame], epoch: dt.date
) -> SliceResult:
    """Assign each row to the frame whose [start, end) contains its date.

    The date of a row is ``epoch + event_time`` seconds (UTC). Rows outside
    the schedule span are dropped and counted; frame outputs preserve input
    row order and together with the dropped rows partition the input.
    """
    frames = sorted(schedule, key=lambda f: f.start)
    for a, b in zip(frames, frames[1:]):
        if a.end != b.start:
            raise DataError(
                f"schedule is not contiguous: frame ending {a.end} followed by frame starting {b.start}"
            )
    bounds_s = [
        float((f.start - epoch).days) * 86400.0 for f in frames
    ] + [float((frames[-1].end - epoch).days) * 86400.0]
    edges = np.asarray(bounds_s)
    pos = np.searchsorted(edges, matrix.event_time, side="right") - 1
    in_range = (pos >= 0) & (pos < len(frames)) & (matrix.event_time < edges[-1])
    dropped = int(np.sum(~in_range))
    if dropped:
        log.warning("slice_frames dropped %d rows outside the schedule span", dropped)
    out: list[DesignMatrix] = []
    empty = 0
    for i in range(len(frames)):
        mask = in_range & (pos == i)
        sub = matrix.select(mask)
        if sub.n_rows == 0:
            empty += 1
            log.warning("frame %d (%s..%s) is empty", frames[i].index, frames[i].start, frames[i].end)
        out.append(sub)
    return SliceResult(frames=out, dropped=dropped, empty_frames=empty)


def table_rows_in(table: DataFrameTable, frame: TimeFrame, epoch: dt.date) -> DataFrameTable:
    """Rows of a raw table falling inside a frame (used to fit the schema on
    the designated fitting window before any matrix exists)."""
    lo = float((frame.start - epoch).days) * 86400.0
    hi = float((frame.end - epoch).days) * 86400.0
    mask = (table.event_time >= lo) & (table.event_time < hi)
    return table.select(mask)
