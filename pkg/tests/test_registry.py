import json
import multiprocessing
import shutil

import numpy as np
import pytest

from latkd.errors import ConcurrencyError, IntegrityError
from latkd.gbt import GbtConfig, train
from latkd.mlp import MlpArchitecture, init_mlp
from latkd.registry import BlobStore, RunDir, RunManifest

from conftest import separable_toy


class TestBlobStore:
    def test_put_get_round_trip_one_mib(self, tmp_path):
        store = BlobStore(tmp_path)
        blob = np.random.default_rng(0).bytes(1 << 20)
        digest = store.put_blob(blob)
        assert store.get_blob(digest) == blob

    def test_identical_bytes_dedup_to_one_object(self, tmp_path):
        store = BlobStore(tmp_path)
        d1 = store.put_blob(b"same bytes")
        d2 = store.put_blob(b"same bytes")
        assert d1 == d2
        objects = list((tmp_path / "objects").rglob("*"))
        assert len([p for p in objects if p.is_file()]) == 1

    def test_unknown_hash_is_an_error(self, tmp_path):
        store = BlobStore(tmp_path)
        with pytest.raises(IntegrityError, match="unknown blob"):
            store.get_blob("0" * 64)

    def test_corruption_detected_on_read(self, tmp_path):
        store = BlobStore(tmp_path)
        digest = store.put_blob(b"original content")
        path = tmp_path / "objects" / digest[:2] / digest[2:]
        path.write_bytes(b"tampered content")
        with pytest.raises(IntegrityError, match="integrity"):
            store.get_blob(digest)

    def test_model_round_trips(self, tmp_path, rng):
        store = BlobStore(tmp_path)
        model = init_mlp(MlpArchitecture(input_dim=2, hidden=(4, 3)), seed=0)
        digest = store.put_model(model)
        loaded = store.get_model(digest)
        X = rng.normal(size=(6, 2))
        assert np.array_equal(model.predict_proba(X), loaded.predict_proba(X))

    def test_ensemble_members_stored_recursively(self, tmp_path, rng):
        from latkd.ensemble import EnsembleModel

        store = BlobStore(tmp_path)
        data = separable_toy(60, seed=0)
        gbt_model = train(data, config=GbtConfig(n_estimators=2, seed=1)).model
        mlp_model = init_mlp(MlpArchitecture(input_dim=2, hidden=(4, 3)), seed=1)
        ens = EnsembleModel([mlp_model, gbt_model])
        digest = store.put_model(ens)
        loaded = store.get_model(digest)
        X = rng.normal(size=(5, 2))
        assert np.allclose(ens.predict_proba(X), loaded.predict_proba(X))
        assert loaded.model_hash == ens.model_hash


class TestManifest:
    def test_append_persists_atomically(self, tmp_path):
        run_dir = RunDir(tmp_path / "run")
        manifest = run_dir.open_manifest("r1", {"a": 1})
        snapshots = []
        for i in range(4):
            run_dir.append_entry(manifest, {"kind": "frame", "index": i})
            snapshots.append(run_dir.manifest_path.read_bytes())
        # every snapshot parses and ends at its own last completed entry,
        # which is exactly the guarantee a crash between appends relies on
        for i, snap in enumerate(snapshots):
            loaded = RunManifest.from_payload(json.loads(snap))
            assert [e["index"] for e in loaded.entries] == list(range(i + 1))

    def test_crash_snapshot_is_a_valid_prefix(self, tmp_path):
        src = RunDir(tmp_path / "run")
        manifest = src.open_manifest("r1", {"a": 1})
        src.append_entry(manifest, {"kind": "frame", "index": 0})
        src.append_entry(manifest, {"kind": "frame", "index": 1})
        # simulate a crash: copy the directory state mid-run and reopen
        shutil.copytree(tmp_path / "run", tmp_path / "crashed")
        resumed = RunDir(tmp_path / "crashed").load_manifest()
        assert [e["index"] for e in resumed.entries] == [0, 1]

    def test_manifest_hash_ignores_timings(self, tmp_path):
        a = RunManifest("r", {"cfg": 1})
        b = RunManifest("r", {"cfg": 1})
        a.entries.append({"kind": "frame", "index": 0, "wall_clock_s": 12.5, "created_at": "x"})
        b.entries.append({"kind": "frame", "index": 0, "wall_clock_s": 99.9, "created_at": "y"})
        assert a.manifest_hash == b.manifest_hash
        b.entries[0]["index"] = 1
        assert a.manifest_hash != b.manifest_hash

    def test_reopen_with_different_config_rejected(self, tmp_path):
        run_dir = RunDir(tmp_path / "run")
        run_dir.open_manifest("r1", {"a": 1})
        with pytest.raises(ConcurrencyError, match="different config"):
            run_dir.open_manifest("r1", {"a": 2})

    def test_find_entry(self, tmp_path):
        run_dir = RunDir(tmp_path / "run")
        manifest = run_dir.open_manifest("r1", {})
        run_dir.append_entry(manifest, {"kind": "frame", "index": 3, "x": "y"})
        assert manifest.find(kind="frame", index=3)["x"] == "y"
        assert manifest.find(kind="frame", index=9) is None


def _hold_lock(path, started, release):
    with RunDir(path):
        started.set()
        release.wait(timeout=30)


class TestLocking:
    def test_second_writer_rejected(self, tmp_path):
        path = tmp_path / "run"
        RunDir(path)  # create
        ctx = multiprocessing.get_context("fork")
        started = ctx.Event()
        release = ctx.Event()
        proc = ctx.Process(target=_hold_lock, args=(path, started, release))
        proc.start()
        try:
            assert started.wait(timeout=10)
            with pytest.raises(ConcurrencyError, match="locked"):
                with RunDir(path):
                    pass
        finally:
            release.set()
            proc.join(timeout=10)
        # lock released: re-entry now succeeds
        with RunDir(path):
            pass
