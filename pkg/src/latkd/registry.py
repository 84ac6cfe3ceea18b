"""Content-addressed persistence: blob store, run manifests, model I/O.

Blobs live under ``<root>/objects/<2-char shard>/<digest>``; every read
re-hashes the bytes and fails loudly on corruption. Run manifests are
human-readable JSON rewritten atomically on every append, so a crash between
frames never leaves a half-written entry. Manifest hashes cover only the
deterministic fields — wall-clock timings and creation timestamps are
excluded so identical reruns hash identically.
"""
from __future__ import annotations

import fcntl
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConcurrencyError, IntegrityError
from .serialize import canonical_json_bytes, content_hash, sha256_hex, strip_volatile

VOLATILE_KEYS = frozenset(
    {"wall_clock_s", "created_at", "train_seconds", "teacher_seconds", "run_root"}
)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class BlobStore:
    """Deduplicating content-addressed byte store."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "objects").mkdir(parents=True, exist_ok=True)

    def _path(self, digest: str) -> Path:
        return self.root / "objects" / digest[:2] / digest[2:]

    def put_blob(self, data: bytes) -> str:
        digest = sha256_hex(data)
        path = self._path(digest)
        if not path.exists():
            _atomic_write(path, data)
        return digest

    def get_blob(self, digest: str) -> bytes:
        path = self._path(digest)
        if not path.exists():
            raise IntegrityError(f"unknown blob {digest}")
        data = path.read_bytes()
        if sha256_hex(data) != digest:
            raise IntegrityError(f"blob {digest} failed its integrity check")
        return data

    def has(self, digest: str) -> bool:
        return self._path(digest).exists()

    # -- model payloads ----------------------------------------------------

    def put_model(self, model) -> str:
        """Store a model (recursively storing ensemble members); returns its hash."""
        payload = model.to_payload()
        if payload["format"] == "latkd.ensemble":
            for member in model.members:
                self.put_model(member)
        digest = self.put_blob(canonical_json_bytes(payload))
        assert digest == model.model_hash
        return digest

    def get_model(self, digest: str):
        from .ensemble import EnsembleModel
        from .gbt import GbtModel
        from .mlp import MlpModel

        payload = json.loads(self.get_blob(digest))
        fmt = payload.get("format")
        if fmt == "latkd.mlp":
            return MlpModel.from_payload(payload)
        if fmt == "latkd.gbt":
            return GbtModel.from_payload(payload)
        if fmt == "latkd.ensemble":
            members = [self.get_model(h) for h in payload["members"]]
            return EnsembleModel(members, payload["weights"])
        raise IntegrityError(f"blob {digest} is not a known model payload (format={fmt!r})")


@dataclass
class RunManifest:
    """Append-only record of a run: config snapshot plus one entry per
    completed unit of work (a trained frame, an experiment cell, ...)."""

    run_id: str
    config: dict
    parent_run: str | None = None
    entries: list[dict] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "format": "latkd.manifest",
            "version": 1,
            "run_id": self.run_id,
            "config": self.config,
            "parent_run": self.parent_run,
            "entries": self.entries,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "RunManifest":
        if payload.get("format") != "latkd.manifest":
            raise IntegrityError("not a run manifest")
        return cls(
            run_id=payload["run_id"],
            config=payload["config"],
            parent_run=payload.get("parent_run"),
            entries=list(payload["entries"]),
        )

    def find(self, **keys) -> dict | None:
        for entry in self.entries:
            if all(entry.get(k) == v for k, v in keys.items()):
                return entry
        return None

    @property
    def manifest_hash(self) -> str:
        """Hash over the deterministic content (timings/timestamps stripped)."""
        return content_hash(strip_volatile(self.to_payload(), VOLATILE_KEYS))


class RunDir:
    """A run's on-disk home: manifest + advisory write lock."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.path / "manifest.json"
        self._lock_fd: int | None = None

    def load_manifest(self) -> RunManifest | None:
        if not self.manifest_path.exists():
            return None
        return RunManifest.from_payload(json.loads(self.manifest_path.read_bytes()))

    def open_manifest(self, run_id: str, config: dict, parent_run: str | None = None) -> RunManifest:
        """Load an existing manifest (verifying the config matches) or create one."""
        existing = self.load_manifest()
        if existing is not None:
            if content_hash(existing.config) != content_hash(config):
                raise ConcurrencyError(
                    f"run dir {self.path} holds a manifest for a different config"
                )
            return existing
        manifest = RunManifest(run_id=run_id, config=config, parent_run=parent_run)
        self.write_manifest(manifest)
        return manifest

    def write_manifest(self, manifest: RunManifest) -> None:
        _atomic_write(
            self.manifest_path,
            json.dumps(manifest.to_payload(), indent=2, sort_keys=True).encode(),
        )

    def append_entry(self, manifest: RunManifest, entry: dict) -> None:
        """Append one entry and atomically persist the whole manifest."""
        manifest.entries.append(entry)
        self.write_manifest(manifest)

    # -- advisory locking ---------------------------------------------------

    def __enter__(self) -> "RunDir":
        fd = os.open(self.path / ".lock", os.O_CREAT | os.O_RDWR)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            os.close(fd)
            raise ConcurrencyError(f"run dir {self.path} is locked by another writer") from None
        self._lock_fd = fd
        return self

    def __exit__(self, *exc) -> None:
        if self._lock_fd is not None:
            fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
            os.close(self._lock_fd)
            self._lock_fd = None
